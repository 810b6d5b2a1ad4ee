"""Backend adapters and independent verification for conic programs.

The bridge owns the tolerance contract: a solution is reported optimal only
if the residuals we recompute ourselves (never the backend's numbers) meet
the contract.  Any conic backend with PSD-cone support can be adapted; the
default is Clarabel with SCS as the alternative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .conic import (
    ConicProgram,
    equality_residuals,
    norm_ball_slacks,
    objective_value,
    psd_min_eigenvalues,
    triu_size,
    triu_to_sym,
)

_SQRT2 = math.sqrt(2.0)


@dataclass
class SolverSettings:
    backend: str = "clarabel"
    eq_tol: float = 1e-7
    psd_tol: float = 1e-8
    ball_tol: float = 1e-7
    feas_tol: float = 1e-9
    gap_tol: float = 1e-9
    max_iter: int = 500
    verbose: bool = False


@dataclass
class ResidualReport:
    max_equality_violation: float
    min_eigenvalues: dict[str, float]
    ball_slacks: dict[str, float]
    objective: float

    def passes(self, s: SolverSettings) -> bool:
        return (
            self.max_equality_violation <= s.eq_tol
            and all(v >= -s.psd_tol for v in self.min_eigenvalues.values())
            and all(v >= -s.ball_tol for v in self.ball_slacks.values())
        )


@dataclass
class Solution:
    status: str  # optimal | infeasible | unbounded | numerical-failure
    values: dict[str, np.ndarray] = field(default_factory=dict)
    objective: float | None = None
    residuals: ResidualReport | None = None
    info: dict = field(default_factory=dict)


def verify(cp: ConicProgram, values: Mapping[str, np.ndarray]) -> ResidualReport:
    """Recompute all residuals of a candidate solution from scratch."""
    missing = [n for n in list(cp.scalar_blocks) + list(cp.sym_blocks) if n not in values]
    if missing:
        raise ValueError(f"solution is missing blocks: {missing}")
    res = equality_residuals(cp, values)
    return ResidualReport(
        max_equality_violation=float(np.abs(res).max()) if res.size else 0.0,
        min_eigenvalues=psd_min_eigenvalues(cp, values),
        ball_slacks=norm_ball_slacks(cp, values),
        objective=objective_value(cp, values),
    )


def _layout(cp: ConicProgram) -> tuple[dict[str, int], int]:
    offsets: dict[str, int] = {}
    pos = 0
    for name, k in cp.scalar_blocks.items():
        offsets[name] = pos
        pos += k
    for name, n in cp.sym_blocks.items():
        offsets[name] = pos
        pos += triu_size(n)
    return offsets, pos


def _psd_triangle_order(backend: str, n: int):
    """Yield (i, j, scale) per svec row in the backend's PSD vectorization,
    with (i, j) the canonical upper-triangle entry (i <= j)."""
    if backend == "clarabel":  # upper triangle, column-major
        for j in range(n):
            for i in range(j + 1):
                yield i, j, (1.0 if i == j else _SQRT2)
    else:  # scs: lower triangle, column-major
        for c in range(n):
            for r in range(c, n):
                yield c, r, (1.0 if r == c else _SQRT2)


def _assemble(cp: ConicProgram, backend: str):
    offsets, nvar = _layout(cp)

    def col(ref) -> int:
        name, idx = ref
        return offsets[name] + idx

    rows_i: list[int] = []
    cols_j: list[int] = []
    vals: list[float] = []
    b: list[float] = []
    row = 0

    for terms, rhs in cp.equalities:
        for ref, coef in terms:
            rows_i.append(row)
            cols_j.append(col(ref))
            vals.append(coef)
        b.append(rhs)
        row += 1
    n_zero = row

    soc_dims = []
    for name, bound in cp.norm_balls:
        start = row
        b.append(bound)
        row += 1
        if name in cp.scalar_blocks:
            entries = [(k, 1.0) for k in range(cp.scalar_blocks[name])]
        else:
            n = cp.sym_blocks[name]
            from .conic import triu_index

            entries = [(triu_index(i, j), s) for i, j, s in _psd_triangle_order("clarabel", n)]
        for idx, scale in entries:
            rows_i.append(row)
            cols_j.append(offsets[name] + idx)
            vals.append(-scale)
            b.append(0.0)
            row += 1
        soc_dims.append(row - start)

    psd_dims = []
    from .conic import triu_index

    for name, offset in cp.psd_memberships:
        n = cp.sym_blocks[name]
        for i, j, scale in _psd_triangle_order(backend, n):
            rows_i.append(row)
            cols_j.append(offsets[name] + triu_index(i, j))
            vals.append(-scale)
            b.append(0.0 if offset is None else -scale * float(offset[i, j]))
            row += 1
        psd_dims.append(n)

    A = sp.csc_matrix((vals, (rows_i, cols_j)), shape=(row, nvar))
    bvec = np.asarray(b)

    q = np.zeros(nvar)
    for ref, coef in cp.objective:
        q[col(ref)] += coef

    P = sp.csc_matrix((nvar, nvar))
    if cp.lsq_rows:
        pi, pj, pv = [], [], []
        for terms, off in cp.lsq_rows:
            idxs = [col(ref) for ref, _ in terms]
            coefs = [c for _, c in terms]
            for a, ca in zip(idxs, coefs):
                q[a] += -2.0 * off * ca
                for bcol, cb in zip(idxs, coefs):
                    pi.append(a)
                    pj.append(bcol)
                    pv.append(2.0 * ca * cb)
        P = sp.csc_matrix((pv, (pi, pj)), shape=(nvar, nvar))
    return A, bvec, q, P, n_zero, soc_dims, psd_dims, offsets, nvar


def _extract(cp: ConicProgram, x: np.ndarray, offsets: dict[str, int]) -> dict[str, np.ndarray]:
    values: dict[str, np.ndarray] = {}
    for name, k in cp.scalar_blocks.items():
        values[name] = np.array(x[offsets[name] : offsets[name] + k])
    for name, n in cp.sym_blocks.items():
        values[name] = triu_to_sym(x[offsets[name] : offsets[name] + triu_size(n)], n)
    return values


def _solve_clarabel(cp: ConicProgram, s: SolverSettings) -> tuple[str, np.ndarray | None, dict]:
    import clarabel

    A, b, q, P, n_zero, soc_dims, psd_dims, offsets, nvar = _assemble(cp, "clarabel")
    cones = []
    if n_zero:
        cones.append(clarabel.ZeroConeT(n_zero))
    for d in soc_dims:
        cones.append(clarabel.SecondOrderConeT(d))
    for n in psd_dims:
        cones.append(clarabel.PSDTriangleConeT(n))
    settings = clarabel.DefaultSettings()
    settings.verbose = s.verbose
    settings.max_iter = s.max_iter
    settings.tol_feas = s.feas_tol
    settings.tol_gap_abs = s.gap_tol
    settings.tol_gap_rel = s.gap_tol
    solver = clarabel.DefaultSolver(sp.triu(P, format="csc"), q, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    info = {
        "backend": "clarabel",
        "backend_status": status,
        "iterations": sol.iterations,
        "solve_time": sol.solve_time,
    }
    ok_states = {"Solved", "AlmostSolved"}
    if status in ok_states:
        return "candidate", np.asarray(sol.x), info
    if status in {"PrimalInfeasible", "AlmostPrimalInfeasible"}:
        return "infeasible", None, info
    if status in {"DualInfeasible", "AlmostDualInfeasible"}:
        return "unbounded", None, info
    return "numerical-failure", (np.asarray(sol.x) if sol.x is not None else None), info


def _solve_scs(cp: ConicProgram, s: SolverSettings) -> tuple[str, np.ndarray | None, dict]:
    import scs

    A, b, q, P, n_zero, soc_dims, psd_dims, offsets, nvar = _assemble(cp, "scs")
    data = {"A": A, "b": b, "c": q}
    if P.nnz:
        data["P"] = sp.triu(P, format="csc")
    cone = {}
    if n_zero:
        cone["z"] = n_zero
    if soc_dims:
        cone["q"] = soc_dims
    if psd_dims:
        cone["s"] = psd_dims
    out = scs.solve(
        data,
        cone,
        verbose=s.verbose,
        eps_abs=s.feas_tol,
        eps_rel=s.feas_tol,
        max_iters=max(20000, 50 * s.max_iter),
    )
    status = out["info"]["status"].lower()
    info = {
        "backend": "scs",
        "backend_status": status,
        "iterations": out["info"].get("iter"),
        "solve_time": out["info"].get("solve_time"),
    }
    if status.startswith("solved"):
        return "candidate", np.asarray(out["x"]), info
    if "infeasible" in status:
        return "infeasible", None, info
    if "unbounded" in status:
        return "unbounded", None, info
    return "numerical-failure", None, info


_BACKENDS = {"clarabel": _solve_clarabel, "scs": _solve_scs}


def solve(cp: ConicProgram, settings: SolverSettings | None = None) -> Solution:
    """Solve a conic program and independently verify the returned point.

    A backend 'solved' claim is downgraded to numerical-failure whenever the
    recomputed residuals do not meet the contract (equalities within eq_tol,
    PSD blocks within psd_tol, ball slacks within ball_tol).
    """
    s = settings or SolverSettings()
    if s.backend not in _BACKENDS:
        raise ValueError(f"unknown backend '{s.backend}' (have {sorted(_BACKENDS)})")
    outcome, x, info = _BACKENDS[s.backend](cp, s)
    if outcome in {"infeasible", "unbounded"}:
        return Solution(status=outcome, info=info)
    if x is None:
        return Solution(status="numerical-failure", info=info)
    offsets, _ = _layout(cp)
    values = _extract(cp, x, offsets)
    report = verify(cp, values)
    status = "optimal" if (outcome == "candidate" and report.passes(s)) else "numerical-failure"
    return Solution(
        status=status,
        values=values,
        objective=report.objective,
        residuals=report,
        info=info,
    )
