"""Implicit polynomial state-space models and their simulation machinery.

A model is given by two dictionary sums e(x) = sum_i theta_i psi_i(x) and
f(x, w) = sum_i theta_i phi_i(x, w); the update map is x(t) =
e^{-1}(f(x(t-1), w(t))), evaluated by a damped Newton solve.  Strong
monotonicity of e (certified at solve time with margin delta) makes that
root unique and the Newton iteration globally convergent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .datasets import DataSet
from .polynomials import MonomialBasis, Polynomial, degree_sum

NEWTON_MAX_ITER = 100
NEWTON_RTOL = 1e-10


class StepConvergenceError(RuntimeError):
    """Newton solve for the implicit update failed; carries the final residual."""

    def __init__(self, message: str, residual: float, t: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.t = t


@dataclass(frozen=True)
class Dictionary:
    """Paired basis functions: psi[i] maps states, phi[i] maps state-input pairs.

    Each entry is a tuple of n_x coordinate polynomials; psi entries are over
    the n_x state variables, phi entries over the n_x + n_w state-input
    variables.  An entry may be zero on one side so e and f get independent
    coefficients.
    """

    psi: tuple[tuple[Polynomial, ...], ...]
    phi: tuple[tuple[Polynomial, ...], ...]
    n_x: int
    n_w: int

    def __post_init__(self):
        if len(self.psi) != len(self.phi):
            raise ValueError(f"psi/phi length mismatch: {len(self.psi)} vs {len(self.phi)}")
        for i, (ps, ph) in enumerate(zip(self.psi, self.phi)):
            if len(ps) != self.n_x or len(ph) != self.n_x:
                raise ValueError(f"entry {i} must have {self.n_x} coordinate polynomials")
            if any(p.nvars != self.n_x for p in ps):
                raise ValueError(f"psi[{i}] must be over {self.n_x} state variables")
            if any(p.nvars != self.n_x + self.n_w for p in ph):
                raise ValueError(f"phi[{i}] must be over {self.n_x + self.n_w} variables")

    @property
    def n_params(self) -> int:
        return len(self.psi)

    def cache_key(self) -> tuple:
        def poly_key(p: Polynomial):
            return tuple(sorted(p.terms.items()))

        return (
            self.n_x,
            self.n_w,
            tuple(tuple(poly_key(p) for p in entry) for entry in self.psi),
            tuple(tuple(poly_key(p) for p in entry) for entry in self.phi),
        )


def _zero(nvars: int) -> Polynomial:
    return Polynomial.zero(nvars)


def linear_dictionary(n_x: int, n_w: int) -> Dictionary:
    """Entries spanning all linear e(x) = Ex and f(x, w) = Fx + Gw."""
    psi, phi = [], []
    nv = n_x + n_w
    for k in range(n_x):
        for d in range(n_x):
            entry = [_zero(n_x)] * n_x
            entry[k] = Polynomial.variable(n_x, d)
            psi.append(tuple(entry))
            phi.append(tuple([_zero(nv)] * n_x))
    for k in range(n_x):
        for d in range(nv):
            entry = [_zero(nv)] * n_x
            entry[k] = Polynomial.variable(nv, d)
            phi.append(tuple(entry))
            psi.append(tuple([_zero(n_x)] * n_x))
    return Dictionary(tuple(psi), tuple(phi), n_x, n_w)


def scalar_monomial_dictionary(e_degree: int = 5, f_x_degree: int = 3) -> Dictionary:
    """Scalar dictionary: e spans monomials x^0..x^e_degree, f spans x^j w^k
    with j <= f_x_degree and k <= 1 (affine in the input)."""
    psi, phi = [], []
    for j in range(e_degree + 1):
        psi.append((Polynomial.monomial((j,)),))
        phi.append((_zero(2),))
    for j in range(f_x_degree + 1):
        for k in (0, 1):
            psi.append((_zero(1),))
            phi.append((Polynomial.monomial((j, k)),))
    return Dictionary(tuple(psi), tuple(phi), 1, 1)


def combine_entries(entries: Sequence[Sequence[Polynomial]], theta: np.ndarray) -> list[Polynomial]:
    n_x = len(entries[0])
    nvars = entries[0][0].nvars
    out = [Polynomial.zero(nvars) for _ in range(n_x)]
    for coef, entry in zip(theta, entries):
        if coef == 0.0:
            continue
        for d in range(n_x):
            if not entry[d].is_zero():
                out[d] = out[d] + entry[d].scale(float(coef))
    return out


class ProjectiveModel:
    """Parameter vector plus dictionary; the update map is e^{-1} after f."""

    def __init__(self, theta, dictionary: Dictionary, delta_margin: float):
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.shape[0] != dictionary.n_params:
            raise ValueError(f"theta length {theta.shape[0]} != n_params {dictionary.n_params}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("non-finite parameters")
        if delta_margin <= 0:
            raise ValueError("delta_margin must be positive")
        self.theta = theta
        self.dictionary = dictionary
        self.delta_margin = float(delta_margin)
        self._e = combine_entries(dictionary.psi, theta)
        self._f = combine_entries(dictionary.phi, theta)
        self._e_jac = [[p.differentiate(a) for a in range(dictionary.n_x)] for p in self._e]

    @property
    def n_x(self) -> int:
        return self.dictionary.n_x

    @property
    def n_w(self) -> int:
        return self.dictionary.n_w

    def e_polynomials(self) -> list[Polynomial]:
        return list(self._e)

    def f_polynomials(self) -> list[Polynomial]:
        return list(self._f)

    def eval_e(self, x) -> np.ndarray:
        X, single = _as_batch(x, self.n_x)
        out = np.column_stack([p.evaluate_many(X) for p in self._e])
        return out[0] if single else out

    def eval_f(self, x, w) -> np.ndarray:
        X, single_x = _as_batch(x, self.n_x)
        W, single_w = _as_batch(w, self.n_w)
        if X.shape[0] != W.shape[0]:
            if X.shape[0] == 1:
                X = np.broadcast_to(X, (W.shape[0], X.shape[1]))
            elif W.shape[0] == 1:
                W = np.broadcast_to(W, (X.shape[0], W.shape[1]))
            else:
                raise ValueError("batch size mismatch between x and w")
        V = np.concatenate([X, W], axis=1)
        out = np.column_stack([p.evaluate_many(V) for p in self._f])
        return out[0] if (single_x and single_w) else out

    def _e_jacobian(self, X: np.ndarray) -> np.ndarray:
        B = X.shape[0]
        J = np.empty((B, self.n_x, self.n_x))
        for d in range(self.n_x):
            for a in range(self.n_x):
                J[:, d, a] = self._e_jac[d][a].evaluate_many(X)
        return J

    def solve_e(self, target, x_guess) -> np.ndarray:
        """Solve e(x) = target by damped Newton with backtracking on the residual."""
        TGT, single = _as_batch(target, self.n_x)
        X, _ = _as_batch(x_guess, self.n_x)
        X = np.array(np.broadcast_to(X, TGT.shape), dtype=float)
        tol = NEWTON_RTOL * (1.0 + np.linalg.norm(TGT, axis=1))
        res = self.eval_e(X) - TGT
        rnorm = np.linalg.norm(res, axis=1)
        for _ in range(NEWTON_MAX_ITER):
            active = rnorm > tol
            if not active.any():
                break
            Xa = X[active]
            J = self._e_jacobian(Xa)
            try:
                dx = np.linalg.solve(J, -res[active][..., None])[..., 0]
            except np.linalg.LinAlgError as err:
                raise StepConvergenceError(
                    f"singular Jacobian in implicit step: {err}", float(rnorm.max())
                ) from err
            step = np.ones(Xa.shape[0])
            cur = rnorm[active].copy()
            Xn = Xa + dx
            for _ in range(40):
                rn = np.linalg.norm(self.eval_e(Xn) - TGT[active], axis=1)
                worse = rn >= cur
                if not worse.any():
                    break
                step[worse] *= 0.5
                Xn[worse] = Xa[worse] + step[worse, None] * dx[worse]
            X[active] = Xn
            res[active] = self.eval_e(Xn) - TGT[active]
            rnorm[active] = np.linalg.norm(res[active], axis=1)
        else:
            if (rnorm > tol).any():
                raise StepConvergenceError(
                    f"implicit step did not converge in {NEWTON_MAX_ITER} iterations "
                    f"(residual {rnorm.max():.3e}); the model may be uncertified",
                    float(rnorm.max()),
                )
        return X[0] if single else X

    def step(self, x_prev, w) -> np.ndarray:
        """One update x = e^{-1}(f(x_prev, w)), warm-started at x_prev."""
        return self.solve_e(self.eval_f(x_prev, w), x_prev)

    def simulate(self, x0, w_seq) -> np.ndarray:
        """Trajectory x(0..T) driven by w_seq (row t is w(t); row 0 is unused)."""
        X0, _ = _as_batch(x0, self.n_x)
        return self.simulate_batch(X0, w_seq)[0]

    def simulate_batch(self, x0s, w_seq) -> np.ndarray:
        """Simulate several initial states against the shared input sequence."""
        X0, _ = _as_batch(x0s, self.n_x)
        W = np.asarray(w_seq, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        if W.shape[1] != self.n_w:
            raise ValueError(f"input width {W.shape[1]} != n_w {self.n_w}")
        T = W.shape[0] - 1
        out = np.empty((X0.shape[0], T + 1, self.n_x))
        out[:, 0] = X0
        x = X0
        for t in range(1, T + 1):
            try:
                x = self.step(x, np.broadcast_to(W[t], (x.shape[0], self.n_w)))
            except StepConvergenceError as err:
                raise StepConvergenceError(f"{err} (at t={t})", err.residual, t=t) from err
            out[:, t] = x
        return out


def _as_batch(v, width: int) -> tuple[np.ndarray, bool]:
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        if width != 1:
            raise ValueError(f"scalar given where a {width}-vector was expected")
        return a.reshape(1, 1), True
    if a.ndim == 1:
        if a.shape[0] != width:
            raise ValueError(f"vector length {a.shape[0]} != expected {width}")
        return a[None, :], True
    if a.ndim == 2:
        if a.shape[1] != width:
            raise ValueError(f"batch width {a.shape[1]} != expected {width}")
        return a, False
    raise ValueError(f"bad rank {a.ndim}")


def sim_error(model, x0, xtilde, wtilde, C=None) -> float:
    """Mean squared output gap (1/T) sum_{t=0}^{T-1} |C (xtilde(t) - x(t))|^2
    between a measured trajectory and the model's free run from x0."""
    xt = np.asarray(xtilde, dtype=float)
    if xt.ndim == 1:
        xt = xt[:, None]
    W = np.asarray(wtilde, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    if xt.shape[0] != W.shape[0]:
        raise ValueError(f"trajectory length {xt.shape[0]} != input length {W.shape[0]}")
    T = xt.shape[0] - 1
    if isinstance(model, ProjectiveModel):
        x = model.simulate(np.asarray(x0, dtype=float).ravel(), W)
    else:
        x = np.empty_like(xt)
        x[0] = np.asarray(x0, dtype=float).ravel()
        for t in range(1, T + 1):
            x[t] = np.asarray(model(x[t - 1], W[t]), dtype=float).ravel()
    Cm = np.eye(xt.shape[1]) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
    diff = (xt[:T] - x[:T]) @ Cm.T
    return float((diff ** 2).sum() / T)


def mean_sim_error(model: ProjectiveModel, ds: DataSet) -> float:
    """Average of sim_error over all experiments, simulated jointly."""
    traj = model.simulate_batch(ds.xs[:, 0], ds.w)
    Cm = ds.output_map()
    T = ds.horizon
    diff = np.einsum("ytd,cd->ytc", ds.xs[:, :T] - traj[:, :T], Cm)
    return float((diff ** 2).sum(axis=(1, 2)).mean() / T)


@dataclass(frozen=True)
class SurrogatePair:
    """Polynomial upper-bound certificate r together with its coefficient
    matrix R over a degree set: r(z) = sum_{j1,j2} R[j1,j2] z^{a_j1 + a_j2}."""

    r: Polynomial
    R: np.ndarray
    aleph: MonomialBasis

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        m = len(self.aleph)
        if R.shape != (m, m):
            raise ValueError(f"R shape {R.shape} != ({m},{m})")
        if not np.allclose(R, R.T, atol=1e-10 * max(1.0, np.abs(R).max())):
            raise ValueError("R must be symmetric")
        expected = expand_quadratic_certificate(R, self.aleph)
        if not self.r.allclose(expected, tol=1e-10 * max(1.0, np.abs(R).max())):
            raise ValueError("r does not match its coefficient matrix over the degree set")

    @classmethod
    def from_matrix(cls, R, aleph: MonomialBasis) -> "SurrogatePair":
        R = np.asarray(R, dtype=float)
        R = 0.5 * (R + R.T)
        return cls(expand_quadratic_certificate(R, aleph), R, aleph)


def expand_quadratic_certificate(R: np.ndarray, aleph: MonomialBasis) -> Polynomial:
    terms: dict[tuple[int, ...], float] = {}
    m = len(aleph)
    for j1 in range(m):
        for j2 in range(m):
            key = degree_sum(aleph[j1], aleph[j2])
            terms[key] = terms.get(key, 0.0) + float(R[j1, j2])
    return Polynomial(aleph.nvars, terms)


def jhat(sp: SurrogatePair, ds: DataSet) -> float:
    """Empirical average of the certificate over all embedded samples."""
    if sp.r.nvars != ds.n_z:
        raise ValueError(f"certificate over {sp.r.nvars} variables, data has n_z={ds.n_z}")
    Z = ds.embedded().reshape(-1, ds.n_z)
    return float(sp.r.evaluate_many(Z).mean())


@dataclass
class StabilityReport:
    trials: int
    horizon: int
    tail_energies: np.ndarray
    head_energies: np.ndarray
    rates: np.ndarray
    max_tail_energy: float
    fitted_rate: float
    ok: bool


def stability_probe(
    model: ProjectiveModel,
    trials: int = 20,
    horizon: int = 200,
    seed: int = 0,
    state_scale: float = 1.0,
    input_scale: float = 1.0,
) -> StabilityReport:
    """Empirical incremental-stability check: simulate paired responses from
    random initial conditions under shared random inputs and report the decay
    of their difference.  Report-only; never raises on a bad model."""
    rng = np.random.default_rng(seed)
    n_x, n_w = model.n_x, model.n_w
    x0 = rng.uniform(-state_scale, state_scale, size=(trials, n_x))
    x0_hat = rng.uniform(-state_scale, state_scale, size=(trials, n_x))
    tails = np.full(trials, np.inf)
    heads = np.full(trials, np.inf)
    rates = np.full(trials, np.inf)
    for k in range(trials):
        w = rng.uniform(-input_scale, input_scale, size=(horizon + 1, n_w))
        try:
            pair = model.simulate_batch(np.stack([x0[k], x0_hat[k]]), w)
        except StepConvergenceError:
            continue
        d = np.linalg.norm(pair[0] - pair[1], axis=1)
        half = horizon // 2
        heads[k] = float((d[:half] ** 2).sum())
        tails[k] = float((d[half:] ** 2).sum())
        mask = d > 1e-13
        if mask.sum() >= 2:
            t_idx = np.nonzero(mask)[0]
            slope = np.polyfit(t_idx, np.log(d[mask]), 1)[0]
            rates[k] = float(np.exp(slope))
        else:
            rates[k] = 0.0
    finite = np.isfinite(rates)
    ok = bool(
        finite.all()
        and (tails <= heads + 1e-12).all()
        and (rates < 1.0).all()
    )
    return StabilityReport(
        trials=trials,
        horizon=horizon,
        tail_energies=tails,
        head_energies=heads,
        rates=rates,
        max_tail_energy=float(tails[finite].max()) if finite.any() else float("inf"),
        fitted_rate=float(rates[finite].max()) if finite.any() else float("inf"),
        ok=ok,
    )


def _poly_to_doc(p: Polynomial) -> list:
    return [[list(a), c] for a, c in sorted(p.terms.items())]


def _poly_from_doc(doc, nvars: int) -> Polynomial:
    return Polynomial(nvars, {tuple(a): c for a, c in doc})


def save_model(model: ProjectiveModel, path: str, provenance: dict | None = None) -> None:
    d = model.dictionary
    doc = {
        "n_x": d.n_x,
        "n_w": d.n_w,
        "psi": [[_poly_to_doc(p) for p in entry] for entry in d.psi],
        "phi": [[_poly_to_doc(p) for p in entry] for entry in d.phi],
        "theta": model.theta.tolist(),
        "delta": model.delta_margin,
        "provenance": provenance or {},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_model(path: str) -> tuple[ProjectiveModel, dict]:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    n_x, n_w = int(doc["n_x"]), int(doc["n_w"])
    psi = tuple(tuple(_poly_from_doc(p, n_x) for p in entry) for entry in doc["psi"])
    phi = tuple(tuple(_poly_from_doc(p, n_x + n_w) for p in entry) for entry in doc["phi"])
    dictionary = Dictionary(psi, phi, n_x, n_w)
    model = ProjectiveModel(np.asarray(doc["theta"]), dictionary, float(doc["delta"]))
    return model, doc.get("provenance", {})
