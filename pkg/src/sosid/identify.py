"""End-to-end estimators over the certified model sets.

Three algorithms are provided: the moment-based semidefinite estimator
(trace objective over the full certified set), plain least squares over the
monotonicity-certified set, and a moment-weighted least squares that swaps
the data into noise-cancelling linearized moments.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datasets import DataSet, dataset_hash
from .models import Dictionary, ProjectiveModel, StepConvergenceError, SurrogatePair, jhat, mean_sim_error
from .moments import MomentMatrix, default_aleph, moment_matrix, standard_moment
from .polynomials import MonomialBasis
from .solve import Solution, SolverSettings, solve
from .sos import (
    build_omega_constraints,
    build_theta_constraints,
    default_lambda,
    default_pi,
    equation_error_quadratic_form,
    minimal_residual_degrees,
    mls_quadratic_form,
    with_quadratic_form_objective,
    with_trace_objective,
)


class IdentificationError(RuntimeError):
    pass


class InfeasibleModelSetError(IdentificationError):
    """The dictionary admits no certified model (for the given margins)."""


class SolverFailureError(IdentificationError):
    def __init__(self, message: str, solution: Solution | None = None):
        super().__init__(message)
        self.solution = solution


@dataclass
class IdentConfig:
    """Knobs shared by the estimators.

    eps defaults to delta when unset.  pi, lam and aleph may be given
    explicitly; otherwise the support-pruned defaults are used (aleph
    defaults to the full degree set allowed by the experiment count for the
    moment-based estimator, and to the minimal residual-spanning set for the
    moment-weighted least squares).
    """

    delta: float = 0.01
    kappa: float = math.inf
    eps: float | None = None
    pi: MonomialBasis | None = None
    lam: MonomialBasis | None = None
    aleph: MonomialBasis | None = None
    settings: SolverSettings = field(default_factory=SolverSettings)
    seed: int = 0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")


@dataclass
class IdentResult:
    model: ProjectiveModel
    surrogate: SurrogatePair | None
    diagnostics: dict
    provenance: dict


def _raise_for_status(sol: Solution, what: str) -> None:
    if sol.status == "optimal":
        return
    if sol.status == "infeasible":
        raise InfeasibleModelSetError(f"{what}: model set is infeasible")
    if sol.status == "unbounded":
        raise SolverFailureError(f"{what}: objective unbounded below", sol)
    raise SolverFailureError(f"{what}: solver failed ({sol.info.get('backend_status')})", sol)


def _training_fit_diagnostics(model: ProjectiveModel, ds: DataSet, sp: SurrogatePair | None) -> dict:
    diag: dict = {}
    try:
        diag["mean_sim_error_train"] = mean_sim_error(model, ds)
    except StepConvergenceError as err:
        diag["mean_sim_error_train"] = None
        diag["simulation_error_failure"] = str(err)
        return diag
    if sp is not None:
        diag["jhat_train"] = jhat(sp, ds)
        slack = diag["jhat_train"] - diag["mean_sim_error_train"]
        diag["upper_bound_slack"] = slack
        if slack < -1e-6 * (1.0 + abs(diag["jhat_train"])):
            warnings.warn(
                f"certificate average {diag['jhat_train']:.3e} fell below the mean "
                f"simulation error {diag['mean_sim_error_train']:.3e}",
                RuntimeWarning,
            )
    return diag


def _provenance(ds: DataSet, cfg: IdentConfig, sol: Solution, algorithm: str, extra: dict | None = None) -> dict:
    p = {
        "algorithm": algorithm,
        "dataset_sha256": dataset_hash(ds),
        "delta": cfg.delta,
        "kappa": None if math.isinf(cfg.kappa) else cfg.kappa,
        "eps": cfg.eps if cfg.eps is not None else cfg.delta,
        "seed": cfg.seed,
        "backend": sol.info.get("backend"),
        "backend_status": sol.info.get("backend_status"),
    }
    if extra:
        p.update(extra)
    return p


def algorithm_a(ds: DataSet, dictionary: Dictionary, cfg: IdentConfig | None = None) -> IdentResult:
    """Moment-based semidefinite estimator.

    Builds the PSD-projected matrix of linearized moments, assembles the
    certified model set, and minimizes trace(R Mhat) (with an optional
    Frobenius ball on R).  The returned model carries its certificate pair.
    """
    cfg = cfg or IdentConfig()
    if (dictionary.n_x, dictionary.n_w) != (ds.n_x, ds.n_w):
        raise ValueError("dictionary dimensions do not match the data set")
    aleph = cfg.aleph or default_aleph(ds.n_experiments, ds.n_z)
    t0 = time.perf_counter()
    mhat = moment_matrix(ds, aleph).project()
    t_moments = time.perf_counter() - t0
    C = ds.output_map()
    pi = cfg.pi or default_pi(dictionary, C, aleph)
    eps = cfg.eps if cfg.eps is not None else cfg.delta
    t0 = time.perf_counter()
    cp = build_theta_constraints(dictionary, C, cfg.delta, eps, pi, aleph)
    cp = with_trace_objective(cp, mhat, cfg.kappa)
    t_build = time.perf_counter() - t0
    t0 = time.perf_counter()
    sol = solve(cp, cfg.settings)
    t_solve = time.perf_counter() - t0
    _raise_for_status(sol, "moment-based estimator")
    model = ProjectiveModel(sol.values["theta"], dictionary, cfg.delta)
    sp = SurrogatePair.from_matrix(sol.values["R"], aleph)
    diag = {
        "objective": sol.objective,
        "residuals": sol.residuals,
        "moment_clip": mhat.clipped,
        "pi_size": len(pi),
        "aleph_size": len(aleph),
        "wall_moments_s": t_moments,
        "wall_build_s": t_build,
        "wall_solve_s": t_solve,
    }
    diag.update(_training_fit_diagnostics(model, ds, sp))
    prov = _provenance(ds, cfg, sol, "A", {"pi_degrees": list(pi.degrees), "aleph_degrees": list(aleph.degrees)})
    return IdentResult(model=model, surrogate=sp, diagnostics=diag, provenance=prov)


def least_squares(ds: DataSet, dictionary: Dictionary, cfg: IdentConfig | None = None) -> IdentResult:
    """Equation-error least squares over the monotonicity-certified set."""
    cfg = cfg or IdentConfig()
    if (dictionary.n_x, dictionary.n_w) != (ds.n_x, ds.n_w):
        raise ValueError("dictionary dimensions do not match the data set")
    lam = cfg.lam or default_lambda(dictionary)
    t0 = time.perf_counter()
    cp = build_omega_constraints(dictionary, cfg.delta, lam)
    Q = equation_error_quadratic_form(ds, dictionary)
    cp = with_quadratic_form_objective(cp, Q)
    t_build = time.perf_counter() - t0
    t0 = time.perf_counter()
    sol = solve(cp, cfg.settings)
    t_solve = time.perf_counter() - t0
    _raise_for_status(sol, "least squares")
    model = ProjectiveModel(sol.values["theta"], dictionary, cfg.delta)
    diag = {
        "objective": sol.objective,
        "residuals": sol.residuals,
        "lambda_size": len(lam),
        "wall_build_s": t_build,
        "wall_solve_s": t_solve,
    }
    diag.update(_training_fit_diagnostics(model, ds, None))
    return IdentResult(
        model=model,
        surrogate=None,
        diagnostics=diag,
        provenance=_provenance(ds, cfg, sol, "LS", {"lambda_degrees": list(lam.degrees)}),
    )


def modified_least_squares(ds: DataSet, dictionary: Dictionary, cfg: IdentConfig | None = None) -> IdentResult:
    """Least squares driven through PSD-projected linearized moments.

    Replaces the raw equation-error Gram matrix by its noise-cancelled
    moment estimate over the minimal residual-spanning degree set, with an
    optional ball |theta| <= sqrt(kappa).
    """
    cfg = cfg or IdentConfig()
    if (dictionary.n_x, dictionary.n_w) != (ds.n_x, ds.n_w):
        raise ValueError("dictionary dimensions do not match the data set")
    aleph = cfg.aleph or minimal_residual_degrees(dictionary)
    lam = cfg.lam or default_lambda(dictionary)
    t0 = time.perf_counter()
    mhat = moment_matrix(ds, aleph).project()
    Q = mls_quadratic_form(mhat, dictionary)
    cp = build_omega_constraints(dictionary, cfg.delta, lam)
    cp = with_quadratic_form_objective(cp, Q, cfg.kappa)
    t_build = time.perf_counter() - t0
    t0 = time.perf_counter()
    sol = solve(cp, cfg.settings)
    t_solve = time.perf_counter() - t0
    _raise_for_status(sol, "moment-weighted least squares")
    model = ProjectiveModel(sol.values["theta"], dictionary, cfg.delta)
    diag = {
        "objective": sol.objective,
        "residuals": sol.residuals,
        "moment_clip": mhat.clipped,
        "lambda_size": len(lam),
        "aleph_size": len(aleph),
        "wall_build_s": t_build,
        "wall_solve_s": t_solve,
    }
    diag.update(_training_fit_diagnostics(model, ds, None))
    return IdentResult(
        model=model,
        surrogate=None,
        diagnostics=diag,
        provenance=_provenance(ds, cfg, sol, "MLS", {"aleph_degrees": list(aleph.degrees)}),
    )


def persistence_diagnostic(
    x, w, aleph: MonomialBasis, horizons: Sequence[int] | None = None
) -> list[tuple[int, float]]:
    """Minimum eigenvalue of the empirical moment matrix over a horizon grid.

    Purely diagnostic: degenerate (insufficiently exciting) signals show a
    minimum eigenvalue collapsing toward zero as the horizon grows.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if w.ndim == 1:
        w = w[:, None]
    T_full = x.shape[0] - 1
    if horizons is None:
        lo = max(2, T_full // 8)
        horizons = sorted({int(v) for v in np.geomspace(lo, T_full, num=5)})
    out = []
    for T in horizons:
        if not 1 <= T <= T_full:
            raise ValueError(f"horizon {T} out of range 1..{T_full}")
        m = len(aleph)
        M = np.empty((m, m))
        cache: dict = {}
        for j1 in range(m):
            for j2 in range(j1, m):
                key = tuple(a + b for a, b in zip(aleph[j1], aleph[j2]))
                if key not in cache:
                    cache[key] = standard_moment(x[: T + 1], w[: T + 1], key)
                M[j1, j2] = M[j2, j1] = cache[key]
        out.append((T, float(np.linalg.eigvalsh(M).min())))
    return out
