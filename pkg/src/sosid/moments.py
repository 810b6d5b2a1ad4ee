"""Linearized and standard empirical moments, moment matrices, PSD projection.

The linearized moment of degree alpha spreads the monomial z^alpha across
distinct experiments (factor i reads experiment i), which cancels the bias
of independent zero-mean measurement noise in expectation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datasets import DataSet
from .polynomials import (
    Degree,
    MonomialBasis,
    basis_up_to_degree,
    degree_sum,
    factor_coordinate,
    total_degree,
)


class InsufficientExperimentsError(ValueError):
    """Moment degree exceeds the number of available experiments."""


def _check_alpha(ds: DataSet, alpha: Sequence[int]) -> tuple[Degree, int]:
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != ds.n_z:
        raise ValueError(f"alpha has length {len(alpha)}, expected n_z={ds.n_z}")
    m = total_degree(alpha)
    if m > ds.n_experiments:
        raise InsufficientExperimentsError(
            f"moment degree |alpha|={m} exceeds experiment count N={ds.n_experiments}"
        )
    return alpha, m


def linearized_moment(
    ds: DataSet,
    alpha: Sequence[int],
    permutations: int = 0,
    rng: np.random.Generator | None = None,
) -> float:
    """Noise-cancelling empirical moment (1/T) sum_t prod_i [z_i(t)]_{beta(i)}.

    Factor i of the product reads experiment i.  The lift is not unique; with
    permutations > 0 the estimate is averaged over that many random
    assignments of experiments to factors (variance reduction, off by
    default to match the plain estimator).
    """
    alpha, m = _check_alpha(ds, alpha)
    if m == 0:
        return 1.0
    Z = ds.embedded()
    coords = [factor_coordinate(alpha, i) for i in range(m)]

    def product_mean(order: Sequence[int]) -> float:
        prod = np.ones(Z.shape[1])
        for i in range(m):
            prod = prod * Z[order[i], :, coords[i]]
        return float(prod.mean())

    if permutations <= 0:
        return product_mean(range(m))
    rng = np.random.default_rng(0) if rng is None else rng
    vals = [product_mean(rng.permutation(ds.n_experiments)[:m]) for _ in range(permutations)]
    return float(np.mean(vals))


def standard_moment(xbar, w, alpha: Sequence[int]) -> float:
    """Plain empirical moment (1/T) sum_t zbar(t)^alpha of a single trajectory."""
    xbar = np.asarray(xbar, dtype=float)
    w = np.asarray(w, dtype=float)
    if xbar.ndim == 1:
        xbar = xbar[:, None]
    if w.ndim == 1:
        w = w[:, None]
    n_x, n_w = xbar.shape[1], w.shape[1]
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != 2 * n_x + n_w:
        raise ValueError(f"alpha has length {len(alpha)}, expected {2 * n_x + n_w}")
    if xbar.shape[0] != w.shape[0]:
        raise ValueError("state and input lengths differ")
    T = xbar.shape[0] - 1
    Z = np.concatenate([xbar[1:], xbar[:-1], w[1:]], axis=1)
    vals = np.ones(T)
    for d, e in enumerate(alpha):
        if e:
            vals = vals * Z[:, d] ** e
    return float(vals.mean())


def default_aleph(n_experiments: int, n_z: int) -> MonomialBasis:
    """Degree set {alpha : 2*|alpha| <= N}; any subset may be substituted."""
    if n_experiments < 2:
        raise ValueError("need at least 2 experiments for a nonconstant degree set")
    return basis_up_to_degree(n_z, n_experiments // 2)


@dataclass(frozen=True)
class MomentMatrix:
    """Symmetric matrix of moments indexed by a degree set.

    Entry (j1, j2) is the moment of degree aleph[j1] + aleph[j2].  When
    ``projected`` is set the matrix is the Frobenius-nearest PSD matrix of
    the raw one; ``clipped`` records the total negative eigenvalue mass
    removed beyond numerical jitter.
    """

    aleph: MonomialBasis
    M: np.ndarray
    projected: bool = False
    clipped: float = 0.0

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        if M.shape != (len(self.aleph), len(self.aleph)):
            raise ValueError(f"matrix shape {M.shape} does not match |aleph|={len(self.aleph)}")
        if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
            raise ValueError("moment matrix must be symmetric")
        if self.projected and len(M) and np.linalg.eigvalsh(M).min() < -1e-9:
            raise ValueError("projected moment matrix has eigenvalue below -1e-9")

    def project(self) -> "MomentMatrix":
        if self.projected:
            return self
        Mp, clipped = _psd_project_report(self.M)
        return MomentMatrix(self.aleph, Mp, projected=True, clipped=clipped)


def moment_matrix(ds: DataSet, aleph: MonomialBasis, permutations: int = 0,
                  rng: np.random.Generator | None = None) -> MomentMatrix:
    """Raw (unprojected) matrix of linearized moments over a degree set."""
    if aleph.nvars != ds.n_z:
        raise ValueError(f"degree set over {aleph.nvars} variables, data has n_z={ds.n_z}")
    worst = 2 * aleph.max_degree
    if worst > ds.n_experiments:
        raise InsufficientExperimentsError(
            f"degree set needs moments of degree up to {worst}, "
            f"but only N={ds.n_experiments} experiments are available"
        )
    m = len(aleph)
    cache: dict[Degree, float] = {}
    M = np.empty((m, m))
    for j1 in range(m):
        for j2 in range(j1, m):
            key = degree_sum(aleph[j1], aleph[j2])
            if key not in cache:
                cache[key] = linearized_moment(ds, key, permutations=permutations, rng=rng)
            M[j1, j2] = M[j2, j1] = cache[key]
    M = 0.5 * (M + M.T)
    return MomentMatrix(aleph, M)


def noiseless_moment_matrix(xbars, w, aleph: MonomialBasis) -> MomentMatrix:
    """Matrix of standard moments averaged over the given noiseless trajectories."""
    xbars = np.asarray(xbars, dtype=float)
    if xbars.ndim == 1:
        xbars = xbars[None, :, None]
    elif xbars.ndim == 2:
        xbars = xbars[None, :, :]
    m = len(aleph)
    M = np.zeros((m, m))
    for xb in xbars:
        cache: dict[Degree, float] = {}
        for j1 in range(m):
            for j2 in range(j1, m):
                key = degree_sum(aleph[j1], aleph[j2])
                if key not in cache:
                    cache[key] = standard_moment(xb, w, key)
                M[j1, j2] += cache[key]
                if j2 > j1:
                    M[j2, j1] += cache[key]
    M /= xbars.shape[0]
    return MomentMatrix(aleph, 0.5 * (M + M.T))


_JITTER = 1e-10


def _psd_project_report(M: np.ndarray) -> tuple[np.ndarray, float]:
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("non-finite entries")
    S = 0.5 * (M + M.T)
    vals, vecs = np.linalg.eigh(S)
    clipped = float(-vals[vals < -_JITTER].sum())
    out = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    return 0.5 * (out + out.T), clipped


def psd_project(M: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD matrix: eigendecompose and clamp negative eigenvalues."""
    return _psd_project_report(M)[0]


def save_moment_matrix(mm: MomentMatrix, path: str) -> None:
    """Dense row-major CSV plus a companion degree-set listing at <path>.degrees.txt."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        for row in mm.M:
            writer.writerow([repr(float(v)) for v in row])
    with open(path + ".degrees.txt", "w", encoding="utf-8") as f:
        for alpha in mm.aleph:
            f.write(" ".join(str(e) for e in alpha) + "\n")
