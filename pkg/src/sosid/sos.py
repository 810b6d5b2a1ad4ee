"""Compile convex model-set constraints into conic programs.

Two polynomial identities define the certified model set: a dissipation
identity that ties the certificate polynomial r to the one-step prediction
discrepancy, and a monotonicity (Lyapunov-type) identity that makes the
implicit map e a bijection and the model incrementally stable.  Both are
affine in the decision variables (theta, R, P), so equating coefficients
against a Gram expansion Pi' Sigma Pi yields linear equalities plus PSD
cone memberships.

Variable layout for the identity space v (dimension 4*n_x + n_w):

    v = [xi; x; w; delta; q]

with xi, x, delta, q of state dimension and w of input dimension, and
z = [xi; x; w] its leading block.  The monotonicity-only set used by the
least-squares estimators lives over [x; delta] (dimension 2*n_x).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linprog

from .conic import ConicProgram, EqRow, VarRef, triu_index, triu_inverse, triu_pairs
from .models import Dictionary
from .moments import MomentMatrix
from .polynomials import (
    Degree,
    MonomialBasis,
    Polynomial,
    basis_up_to_degree,
    degree_sum,
    graded_lex_key,
)


class SpanError(ValueError):
    """An identity monomial cannot be formed as a product of two Gram basis
    elements; the Gram basis is too small."""


# A PolyAffine maps each monomial of the identity space to an affine
# function of decision variables: {monomial: {ref_or_None: coefficient}}
# with the None key holding the constant part.
PolyAffine = dict[Degree, dict[VarRef | None, float]]


def _pa_add(pa: PolyAffine, poly: Polynomial, ref: VarRef | None, scale: float = 1.0) -> None:
    for alpha, c in poly.terms.items():
        row = pa.setdefault(alpha, {})
        row[ref] = row.get(ref, 0.0) + scale * c


def _slots(n_x: int, n_w: int) -> dict[str, int]:
    return {
        "xi": 0,
        "x": n_x,
        "w": 2 * n_x,
        "delta": 2 * n_x + n_w,
        "q": 3 * n_x + n_w,
        "dim": 4 * n_x + n_w,
    }


def _embed_shift(p: Polynomial, base_slots: list[int], nv: int,
                 shift_slots: list[int | None] | None = None) -> Polynomial:
    """Map variable d of p to slot base_slots[d] (+ slot shift_slots[d])."""
    rows = []
    for d in range(p.nvars):
        coeffs = {base_slots[d]: 1.0}
        if shift_slots is not None and shift_slots[d] is not None:
            coeffs[shift_slots[d]] = 1.0
        rows.append((coeffs, 0.0))
    return p.substitute_affine(rows, nv)


class _DictionaryImages:
    """All slot embeddings of the dictionary entries into the identity space."""

    def __init__(self, dictionary: Dictionary):
        n_x, n_w = dictionary.n_x, dictionary.n_w
        s = _slots(n_x, n_w)
        nv = s["dim"]
        xi = [s["xi"] + a for a in range(n_x)]
        x = [s["x"] + a for a in range(n_x)]
        w = [s["w"] + b for b in range(n_w)]
        dl = [s["delta"] + a for a in range(n_x)]
        self.nv = nv
        self.slots = s
        self.psi_at_xi = [[_embed_shift(p, xi, nv) for p in entry] for entry in dictionary.psi]
        self.psi_at_x = [[_embed_shift(p, x, nv) for p in entry] for entry in dictionary.psi]
        self.psi_at_xpd = [[_embed_shift(p, x, nv, dl) for p in entry] for entry in dictionary.psi]
        self.phi_at_xw = [[_embed_shift(p, x + w, nv) for p in entry] for entry in dictionary.phi]
        self.phi_at_xpd_w = [[_embed_shift(p, x + w, nv, dl + [None] * n_w) for p in entry]
                             for entry in dictionary.phi]


def _z_to_v(alpha: Degree, n_x: int) -> Degree:
    return tuple(alpha) + (0,) * (2 * n_x)


def _add_quadratic_block(pa: PolyAffine, block: str, start: int, n: int, nv: int,
                         sign: float) -> None:
    """Add sign * u' B u for the symmetric decision block B over slots
    start..start+n, where u is the corresponding slice of v."""
    for a in range(n):
        for b in range(n):
            e = [0] * nv
            e[start + a] += 1
            e[start + b] += 1
            mono = tuple(e)
            ref = (block, triu_index(a, b))
            row = pa.setdefault(mono, {})
            row[ref] = row.get(ref, 0.0) + sign


def _add_numeric_quadratic(pa: PolyAffine, M: np.ndarray, start: int, nv: int,
                           sign: float) -> None:
    n = M.shape[0]
    for a in range(n):
        for b in range(n):
            if M[a, b] == 0.0:
                continue
            e = [0] * nv
            e[start + a] += 1
            e[start + b] += 1
            mono = tuple(e)
            row = pa.setdefault(mono, {})
            row[None] = row.get(None, 0.0) + sign * M[a, b]


def _monotonicity_terms(pa: PolyAffine, images: _DictionaryImages, dictionary: Dictionary) -> None:
    # 2 delta' (e(x + delta) - e(x)), affine in theta
    n_x = dictionary.n_x
    s = images.slots
    for i in range(dictionary.n_params):
        for d in range(n_x):
            diff = images.psi_at_xpd[i][d] - images.psi_at_x[i][d]
            if diff.is_zero():
                continue
            delta_d = Polynomial.variable(images.nv, s["delta"] + d)
            _pa_add(pa, diff * delta_d, ("theta", i), scale=2.0)


def dissipation_identity(dictionary: Dictionary, C: np.ndarray, aleph: MonomialBasis) -> PolyAffine:
    """Left-hand side of the simulation-error dissipation identity:

        r(z) + 2 delta'(e(x+delta) - e(x)) - |delta|^2_{P + C'C}
             + |q|^2_P - 2 q'(f(x+delta, w) - e(xi))

    as an affine map in the decision variables theta, R, P.
    """
    n_x, n_w = dictionary.n_x, dictionary.n_w
    images = _DictionaryImages(dictionary)
    s = images.slots
    nv = images.nv
    pa: PolyAffine = {}

    m = len(aleph)
    for j1 in range(m):
        for j2 in range(m):
            mono = _z_to_v(degree_sum(aleph[j1], aleph[j2]), n_x)
            ref = ("R", triu_index(j1, j2))
            row = pa.setdefault(mono, {})
            row[ref] = row.get(ref, 0.0) + 1.0

    _monotonicity_terms(pa, images, dictionary)
    _add_quadratic_block(pa, "P", s["delta"], n_x, nv, sign=-1.0)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    _add_numeric_quadratic(pa, C.T @ C, s["delta"], nv, sign=-1.0)
    _add_quadratic_block(pa, "P", s["q"], n_x, nv, sign=+1.0)
    for i in range(dictionary.n_params):
        for d in range(n_x):
            gap = images.phi_at_xpd_w[i][d] - images.psi_at_xi[i][d]
            if gap.is_zero():
                continue
            q_d = Polynomial.variable(nv, s["q"] + d)
            _pa_add(pa, gap * q_d, ("theta", i), scale=-2.0)
    return _pa_clean(pa)


def lyapunov_identity(dictionary: Dictionary, eps: float) -> PolyAffine:
    """Left-hand side of the incremental-stability identity:

        2 delta'(e(x+delta) - e(x)) - |delta|^2_{P + eps I}
             + |q|^2_P - 2 q'(f(x+delta, w) - f(x, w))
    """
    n_x = dictionary.n_x
    images = _DictionaryImages(dictionary)
    s = images.slots
    nv = images.nv
    pa: PolyAffine = {}
    _monotonicity_terms(pa, images, dictionary)
    _add_quadratic_block(pa, "P", s["delta"], n_x, nv, sign=-1.0)
    _add_numeric_quadratic(pa, eps * np.eye(n_x), s["delta"], nv, sign=-1.0)
    _add_quadratic_block(pa, "P", s["q"], n_x, nv, sign=+1.0)
    for i in range(dictionary.n_params):
        for d in range(n_x):
            gap = images.phi_at_xpd_w[i][d] - images.phi_at_xw[i][d]
            if gap.is_zero():
                continue
            q_d = Polynomial.variable(nv, s["q"] + d)
            _pa_add(pa, gap * q_d, ("theta", i), scale=-2.0)
    return _pa_clean(pa)


def monotonicity_identity(dictionary: Dictionary, delta: float) -> PolyAffine:
    """Left-hand side of the bijection certificate over [x; delta]:

        2 delta'(e(x+delta) - e(x)) - delta_margin * |delta|^2
    """
    n_x = dictionary.n_x
    nv = 2 * n_x
    x = list(range(n_x))
    dl = [n_x + a for a in range(n_x)]
    pa: PolyAffine = {}
    for i in range(dictionary.n_params):
        for d in range(n_x):
            p = dictionary.psi[i][d]
            diff = _embed_shift(p, x, nv, dl) - _embed_shift(p, x, nv)
            if diff.is_zero():
                continue
            delta_d = Polynomial.variable(nv, n_x + d)
            _pa_add(pa, diff * delta_d, ("theta", i), scale=2.0)
    _add_numeric_quadratic(pa, delta * np.eye(n_x), n_x, nv, sign=-1.0)
    return _pa_clean(pa)


def _pa_clean(pa: PolyAffine) -> PolyAffine:
    out: PolyAffine = {}
    for mono, row in pa.items():
        kept = {ref: c for ref, c in row.items() if abs(c) > 1e-14}
        if kept:
            out[mono] = kept
    return out


def gram_affine(pi: MonomialBasis, block: str) -> PolyAffine:
    """Coefficients of Pi(v)' Sigma Pi(v) as affine functions of Sigma."""
    pa: PolyAffine = {}
    for k1 in range(len(pi)):
        for k2 in range(k1, len(pi)):
            mono = degree_sum(pi[k1], pi[k2])
            ref = (block, triu_index(k1, k2))
            row = pa.setdefault(mono, {})
            row[ref] = row.get(ref, 0.0) + (1.0 if k1 == k2 else 2.0)
    return pa


def _emit_equalities(lhs: PolyAffine, gram: PolyAffine, coverable=None) -> list[EqRow]:
    """One scaled equality per monomial of LHS - Pi' Sigma Pi.

    An LHS monomial with no Gram product matching it is an error when some
    larger Gram basis could cover it (the given basis is too small).  When no
    basis can ever cover it -- its doubled halves fall outside the identity
    support polytope, so any PSD Gram matrix puts zero weight there -- the
    identity instead forces that coefficient to vanish, and the implied
    equality over the decision variables is emitted.
    """
    rows: list[EqRow] = []
    for mono in sorted(set(lhs) | set(gram), key=graded_lex_key):
        lhs_row = lhs.get(mono, {})
        if lhs_row and mono not in gram:
            if coverable is None or coverable(mono):
                raise SpanError(
                    f"identity monomial {mono} is outside the Gram product span; "
                    f"enlarge the Gram basis"
                )
            if set(lhs_row) == {None}:
                raise SpanError(
                    f"identity monomial {mono} has a fixed nonzero coefficient that "
                    f"no Gram basis can represent"
                )
        terms: dict[VarRef, float] = {}
        const = 0.0
        for ref, c in lhs_row.items():
            if ref is None:
                const += c
            else:
                terms[ref] = terms.get(ref, 0.0) + c
        lhs_scale = max([abs(c) for c in lhs_row.values()], default=1.0)
        scale = max(lhs_scale, 1e-9)
        for ref, c in gram.get(mono, {}).items():
            terms[ref] = terms.get(ref, 0.0) - c
        clean = tuple((ref, c / scale) for ref, c in sorted(terms.items()) if abs(c) > 1e-14)
        rhs = -const / scale
        if not clean:
            if abs(rhs) > 1e-12:
                raise SpanError(f"identity monomial {mono} forces the contradiction 0 = {rhs}")
            continue
        rows.append((clean, rhs))
    return rows


class _CoverChecker:
    """Decides whether some Gram basis could produce a given monomial:
    true iff it splits into two lattice points whose doubles lie in the
    convex hull of the identity support."""

    def __init__(self, support: set[Degree]):
        self.S = np.array(sorted(support), dtype=float)
        self.per_coord_max = self.S.max(axis=0)
        self.A_eq = np.vstack([self.S.T, np.ones(len(self.S))])
        self._in_hull_cache: dict[Degree, bool] = {}
        self.support = support

    def _in_hull(self, point: Degree) -> bool:
        if point in self._in_hull_cache:
            return self._in_hull_cache[point]
        target = np.asarray(point, dtype=float)
        if (target > self.per_coord_max).any():
            ok = False
        elif point in self.support:
            ok = True
        else:
            res = linprog(
                c=np.zeros(len(self.S)),
                A_eq=self.A_eq,
                b_eq=np.concatenate([target, [1.0]]),
                bounds=(0, None),
                method="highs",
            )
            ok = res.status == 0
        self._in_hull_cache[point] = ok
        return ok

    def __call__(self, mono: Degree) -> bool:
        splits = [()]
        for e in mono:
            splits = [s + (k,) for s in splits for k in range(e + 1)]
        for pi1 in splits:
            pi2 = tuple(m - a for m, a in zip(mono, pi1))
            if pi1 > pi2:
                continue
            if self._in_hull(tuple(2 * a for a in pi1)) and self._in_hull(tuple(2 * a for a in pi2)):
                return True
        return False


def build_theta_constraints(
    dictionary: Dictionary,
    C: np.ndarray,
    delta: float,
    eps: float,
    pi: MonomialBasis,
    aleph: MonomialBasis,
) -> ConicProgram:
    """Conic program fragment for the certified model set.

    Declares theta (free), R (PSD; the Gram matrix of the certificate
    polynomial over the degree set), P (with P - delta*I PSD) and two PSD
    Gram blocks, and emits one scaled linear equality per monomial of the
    two defining identities.

    R is kept in the PSD cone because a feasible certificate is always a sum
    of squares (substitute the minimizing q into the dissipation identity),
    and because the trace objective against a PSD-projected moment matrix is
    otherwise unbounded below: entrywise PSD projection breaks the
    degree-sum structure of the moment matrix, so coefficient shuffles of R
    that leave the certificate polynomial (and hence feasibility) unchanged
    could drive the objective to minus infinity whenever no Frobenius ball
    is imposed.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if eps <= 0:
        raise ValueError("eps must be positive")
    n_x = dictionary.n_x
    nv = 4 * n_x + dictionary.n_w
    if pi.nvars != nv:
        raise ValueError(f"Gram basis over {pi.nvars} variables, expected {nv}")
    if aleph.nvars != 2 * n_x + dictionary.n_w:
        raise ValueError("degree set must be over the z variables")
    lhs_b = dissipation_identity(dictionary, C, aleph)
    lhs_c = lyapunov_identity(dictionary, eps)
    eqs = _emit_equalities(lhs_b, gram_affine(pi, "Sigma1"), _CoverChecker(set(lhs_b)))
    eqs += _emit_equalities(lhs_c, gram_affine(pi, "Sigma2"), _CoverChecker(set(lhs_c)))
    return ConicProgram(
        scalar_blocks={"theta": dictionary.n_params},
        sym_blocks={"R": len(aleph), "P": n_x, "Sigma1": len(pi), "Sigma2": len(pi)},
        psd_memberships=(
            ("R", None),
            ("P", delta * np.eye(n_x)),
            ("Sigma1", None),
            ("Sigma2", None),
        ),
        equalities=tuple(eqs),
        metadata={
            "theta": "dictionary coefficients",
            "R": "certificate gram matrix over the degree set",
            "P": "storage metric",
            "Sigma1": "gram matrix of the dissipation identity",
            "Sigma2": "gram matrix of the stability identity",
            "delta": repr(float(delta)),
            "eps": repr(float(eps)),
        },
    )


def build_omega_constraints(
    dictionary: Dictionary,
    delta: float,
    lam: MonomialBasis,
) -> ConicProgram:
    """Conic program fragment certifying that e is a strongly monotone bijection."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if lam.nvars != 2 * dictionary.n_x:
        raise ValueError(f"basis over {lam.nvars} variables, expected {2 * dictionary.n_x}")
    lhs = monotonicity_identity(dictionary, delta)
    eqs = _emit_equalities(lhs, gram_affine(lam, "Sigma"), _CoverChecker(set(lhs)))
    return ConicProgram(
        scalar_blocks={"theta": dictionary.n_params},
        sym_blocks={"Sigma": len(lam)},
        psd_memberships=(("Sigma", None),),
        equalities=tuple(eqs),
        metadata={
            "theta": "dictionary coefficients",
            "Sigma": "gram matrix of the monotonicity identity",
            "delta": repr(float(delta)),
        },
    )


def _half_polytope_basis(support: set[Degree], nvars: int, forced: list[Degree]) -> MonomialBasis:
    """Integer points beta with 2*beta in the convex hull of the support."""
    S = np.array(sorted(support), dtype=float)
    dmax = int(max(s.sum() for s in S))
    half = math.ceil(dmax / 2)
    per_coord_max = S.max(axis=0)
    kept: list[Degree] = list(forced)
    A_eq = np.vstack([S.T, np.ones(len(S))])
    for beta in basis_up_to_degree(nvars, half):
        target = 2 * np.asarray(beta, dtype=float)
        if (target > per_coord_max).any():
            continue
        if tuple(int(t) for t in target) in support:
            kept.append(beta)
            continue
        res = linprog(
            c=np.zeros(len(S)),
            A_eq=A_eq,
            b_eq=np.concatenate([target, [1.0]]),
            bounds=(0, None),
            method="highs",
        )
        if res.status == 0:
            kept.append(beta)
    return MonomialBasis(kept, nvars)


_pi_cache: dict[tuple, MonomialBasis] = {}


def default_pi(dictionary: Dictionary, C: np.ndarray, aleph: MonomialBasis) -> MonomialBasis:
    """Gram basis for the model-set identities: all monomials of at most half
    the identity degree whose doubled exponent lies in the identity support
    polytope, plus the constant and all linear monomials."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    key = (dictionary.cache_key(), C.tobytes(), C.shape, aleph.degrees)
    if key in _pi_cache:
        return _pi_cache[key]
    nv = 4 * dictionary.n_x + dictionary.n_w
    support = set(dissipation_identity(dictionary, C, aleph)) | set(
        lyapunov_identity(dictionary, eps=1.0)
    )
    forced = list(basis_up_to_degree(nv, 1))
    basis = _half_polytope_basis(support, nv, forced)
    _pi_cache[key] = basis
    return basis


_lambda_cache: dict[tuple, MonomialBasis] = {}


def default_lambda(dictionary: Dictionary) -> MonomialBasis:
    """Gram basis for the monotonicity-only identity over [x; delta]."""
    key = dictionary.cache_key()
    if key in _lambda_cache:
        return _lambda_cache[key]
    support = set(monotonicity_identity(dictionary, delta=1.0))
    basis = _half_polytope_basis(support, 2 * dictionary.n_x, forced=[])
    _lambda_cache[key] = basis
    return basis


def minimal_residual_degrees(dictionary: Dictionary) -> MonomialBasis:
    """Smallest degree set over z spanning e(xi) - f(x, w) for every theta."""
    n_x, n_w = dictionary.n_x, dictionary.n_w
    n_z = 2 * n_x + n_w
    xi = list(range(n_x))
    xw = [n_x + a for a in range(n_x)] + [2 * n_x + b for b in range(n_w)]
    degs: set[Degree] = set()
    for entry in dictionary.psi:
        for p in entry:
            degs |= _embed_shift(p, xi, n_z).support()
    for entry in dictionary.phi:
        for p in entry:
            degs |= _embed_shift(p, xw, n_z).support()
    if not degs:
        raise ValueError("empty dictionary")
    return MonomialBasis(degs, n_z)


def gamma_matrices(dictionary: Dictionary, aleph: MonomialBasis) -> list[np.ndarray]:
    """Matrices Gamma_d with [e(xi) - f(x, w)]_d = sum_j z^{a_j} (Gamma_d theta)_j."""
    n_x, n_w = dictionary.n_x, dictionary.n_w
    n_z = 2 * n_x + n_w
    xi = list(range(n_x))
    xw = [n_x + a for a in range(n_x)] + [2 * n_x + b for b in range(n_w)]
    gammas = [np.zeros((len(aleph), dictionary.n_params)) for _ in range(n_x)]
    for i in range(dictionary.n_params):
        for d in range(n_x):
            gap = _embed_shift(dictionary.psi[i][d], xi, n_z) - _embed_shift(
                dictionary.phi[i][d], xw, n_z
            )
            for alpha, c in gap.terms.items():
                if alpha not in aleph:
                    raise SpanError(
                        f"residual monomial {alpha} not covered by the degree set"
                    )
                gammas[d][aleph.index(alpha), i] = c
    return gammas


def with_trace_objective(cp: ConicProgram, mhat: MomentMatrix, kappa: float) -> ConicProgram:
    """Objective trace(R M) plus, for finite kappa, the ball |R|_F <= sqrt(kappa)."""
    m = cp.sym_blocks.get("R")
    if m is None:
        raise ValueError("program has no certificate block R")
    if len(mhat.aleph) != m:
        raise ValueError("moment matrix size does not match the certificate block")
    if not mhat.projected:
        raise ValueError("moment matrix must be PSD-projected before use in the objective")
    M = mhat.M
    objective = []
    for k, (i, j) in enumerate(triu_pairs(m)):
        coef = M[i, i] if i == j else 2.0 * M[i, j]
        if coef != 0.0:
            objective.append((("R", k), float(coef)))
    balls = () if math.isinf(kappa) else (("R", math.sqrt(kappa)),)
    return cp.with_objective(objective, norm_balls=balls)


def _psd_factor_rows(Q: np.ndarray, refs: list[VarRef]) -> list:
    vals, vecs = np.linalg.eigh(0.5 * (Q + Q.T))
    tol = 1e-12 * max(1.0, float(vals.max(initial=0.0)))
    rows = []
    for lam, vec in zip(vals, vecs.T):
        if lam <= tol:
            continue
        g = math.sqrt(lam) * vec
        terms = tuple((refs[i], float(g[i])) for i in range(len(refs)) if abs(g[i]) > 1e-14)
        if terms:
            rows.append((terms, 0.0))
    return rows


def with_quadratic_form_objective(
    cp: ConicProgram, Q: np.ndarray, kappa: float = math.inf
) -> ConicProgram:
    """Objective theta' Q theta (Q PSD) plus an optional ball |theta| <= sqrt(kappa)."""
    n = cp.scalar_blocks.get("theta")
    if n is None or Q.shape != (n, n):
        raise ValueError(f"Q shape {Q.shape} does not match theta block")
    refs = [("theta", i) for i in range(n)]
    balls = () if math.isinf(kappa) else (("theta", math.sqrt(kappa)),)
    return cp.with_objective((), lsq_rows=_psd_factor_rows(Q, refs), norm_balls=balls)


def mls_quadratic_form(mhat: MomentMatrix, dictionary: Dictionary) -> np.ndarray:
    """Moment-weighted equation-error quadratic: Q = sum_d Gamma_d' M Gamma_d."""
    if not mhat.projected:
        raise ValueError("moment matrix must be PSD-projected")
    gammas = gamma_matrices(dictionary, mhat.aleph)
    Q = np.zeros((dictionary.n_params, dictionary.n_params))
    for G in gammas:
        Q += G.T @ mhat.M @ G
    return 0.5 * (Q + Q.T)


def equation_error_quadratic_form(ds, dictionary: Dictionary) -> np.ndarray:
    """Q with theta' Q theta = (1/NT) sum_{i,t} |e(x_i(t)) - f(x_i(t-1), w(t))|^2."""
    N, T = ds.n_experiments, ds.horizon
    X_now = ds.xs[:, 1:].reshape(N * T, ds.n_x)
    X_prev = ds.xs[:, :-1].reshape(N * T, ds.n_x)
    W = np.broadcast_to(ds.w[1:], (N, T, ds.n_w)).reshape(N * T, ds.n_w)
    XW_prev = np.concatenate([X_prev, W], axis=1)
    Q = np.zeros((dictionary.n_params, dictionary.n_params))
    for d in range(ds.n_x):
        F = np.empty((N * T, dictionary.n_params))
        for i in range(dictionary.n_params):
            col = np.zeros(N * T)
            if not dictionary.psi[i][d].is_zero():
                col += dictionary.psi[i][d].evaluate_many(X_now)
            if not dictionary.phi[i][d].is_zero():
                col -= dictionary.phi[i][d].evaluate_many(XW_prev)
            F[:, i] = col
        Q += F.T @ F
    return 0.5 * (Q + Q.T) / (N * T)


def evaluate_identity(pa: PolyAffine, values) -> Polynomial:
    """Instantiate an identity's left-hand side at concrete decision values."""
    some_mono = next(iter(pa), None)
    nv = len(some_mono) if some_mono else 1
    terms = {}
    for mono, row in pa.items():
        acc = 0.0
        for ref, c in row.items():
            if ref is None:
                acc += c
            else:
                name, idx = ref
                block = np.asarray(values[name], dtype=float)
                if block.ndim <= 1:
                    acc += c * float(np.ravel(block)[idx])
                else:
                    i, j = triu_inverse(idx)
                    acc += c * float(block[i, j])
        terms[mono] = acc
    return Polynomial(nv, terms)


def gram_polynomial(pi: MonomialBasis, sigma: np.ndarray) -> Polynomial:
    """Expand Pi(v)' Sigma Pi(v) into a plain polynomial."""
    terms: dict[Degree, float] = {}
    for k1 in range(len(pi)):
        for k2 in range(len(pi)):
            mono = degree_sum(pi[k1], pi[k2])
            terms[mono] = terms.get(mono, 0.0) + float(sigma[k1, k2])
    return Polynomial(pi.nvars, terms)
