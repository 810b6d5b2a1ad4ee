"""Repeated-experiment data sets, the sample embedding, and persistence.

A data set holds one shared input sequence w(0..T) and N state sequences
x_i(0..T).  The internal time convention is x(t) = a(x(t-1), w(t)); data
recorded against x(t+1) = f(x(t), u(t)) maps in via w(t) := u(t-1).
"""

from __future__ import annotations

import csv
import hashlib
import json
from typing import Sequence

import numpy as np


class DatasetFormatError(ValueError):
    """Malformed or dimensionally inconsistent data-set file."""


class DataSet:
    """Tuple (w, x_1..x_N) of one input and N state trajectories.

    w has shape (T+1, n_w), the states (N, T+1, n_x).  C is an optional
    output map of shape (n_y, n_x); identity is assumed where it is needed
    but not set.  Instances are immutable by convention.
    """

    __slots__ = ("w", "xs", "C", "_embedded")

    def __init__(self, w, xs, C=None):
        if isinstance(xs, (list, tuple)):
            lengths = {np.shape(x)[0] for x in xs}
            if len(lengths) > 1:
                for i, x in enumerate(xs):
                    if np.shape(x)[0] != np.shape(xs[0])[0]:
                        raise DatasetFormatError(
                            f"experiment {i} has {np.shape(x)[0]} samples, "
                            f"expected {np.shape(xs[0])[0]}"
                        )
        w = np.asarray(w, dtype=float)
        xs = np.asarray(xs, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if xs.ndim == 2:
            xs = xs[:, :, None]
        if w.ndim != 2 or xs.ndim != 3:
            raise DatasetFormatError(f"bad array ranks: w{w.shape}, xs{xs.shape}")
        if xs.shape[1] != w.shape[0]:
            raise DatasetFormatError(
                f"state length {xs.shape[1]} does not match input length {w.shape[0]}"
            )
        if xs.shape[0] < 1:
            raise DatasetFormatError("need at least one experiment")
        if w.shape[0] < 2:
            raise DatasetFormatError("need horizon T >= 1 (at least two samples)")
        self.w = w
        self.xs = xs
        self.C = None if C is None else np.asarray(C, dtype=float)
        if self.C is not None and (self.C.ndim != 2 or self.C.shape[1] != self.n_x):
            raise DatasetFormatError(f"output map shape {self.C.shape} incompatible with n_x={self.n_x}")
        self._embedded = None

    @property
    def n_x(self) -> int:
        return self.xs.shape[2]

    @property
    def n_w(self) -> int:
        return self.w.shape[1]

    @property
    def n_experiments(self) -> int:
        return self.xs.shape[0]

    @property
    def horizon(self) -> int:
        return self.w.shape[0] - 1

    @property
    def n_z(self) -> int:
        return 2 * self.n_x + self.n_w

    def output_map(self) -> np.ndarray:
        return np.eye(self.n_x) if self.C is None else self.C

    def embed(self, experiment: int, t: int) -> np.ndarray:
        """The sample z_i(t) = [x_i(t); x_i(t-1); w(t)], t in 1..T."""
        if not 0 <= experiment < self.n_experiments:
            raise IndexError(f"experiment {experiment} out of range")
        if not 1 <= t <= self.horizon:
            raise IndexError(f"t={t} out of range 1..{self.horizon}")
        return np.concatenate([self.xs[experiment, t], self.xs[experiment, t - 1], self.w[t]])

    def embedded(self) -> np.ndarray:
        """All embedded samples, shape (N, T, n_z); row [i, t-1] is z_i(t)."""
        if self._embedded is None:
            T = self.horizon
            z = np.concatenate(
                [self.xs[:, 1 : T + 1], self.xs[:, 0:T], np.broadcast_to(self.w[1 : T + 1], (self.n_experiments, T, self.n_w))],
                axis=2,
            )
            self._embedded = np.ascontiguousarray(z)
        return self._embedded

    def truncate(self, T: int) -> "DataSet":
        """Reveal only samples with t <= T."""
        if not 1 <= T <= self.horizon:
            raise ValueError(f"T={T} out of range 1..{self.horizon}")
        return DataSet(self.w[: T + 1], self.xs[:, : T + 1], self.C)

    @classmethod
    def from_single(cls, x, w, n_copies: int = 1, C=None) -> "DataSet":
        """Data set holding n_copies identical copies of one trajectory."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return cls(w, np.repeat(x[None, :, :], n_copies, axis=0), C)


def siso_embed(u: Sequence[float], y: Sequence[float], n: int, D: int) -> DataSet:
    """Embed scalar input-output data into an n-dimensional repeated-experiment set.

    The input is D-periodic over N periods; windows of n consecutive samples
    become the input and state vectors:

        w(t)     = [u(t+n), ..., u(t+1)]
        x_{i+1}(t) = [y(t+n+i*D), ..., y(t+1+i*D)]

    for t = 0..D-n and i = 0..N-1, so the sequences must hold at least
    N*D + 1 samples.  The default output map C picks the first window entry.
    """
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(u) != len(y):
        raise DatasetFormatError(f"input/output length mismatch: {len(u)} vs {len(y)}")
    if not 1 <= n < D:
        raise DatasetFormatError(f"need 1 <= n < D, got n={n}, D={D}")
    N = (len(u) - 1) // D
    if N < 1 or len(u) < N * D + 1:
        raise DatasetFormatError(
            f"{len(u)} samples inconsistent with window n={n}, period D={D}: "
            f"need at least D+1"
        )
    T = D - n
    w = np.empty((T + 1, n))
    for t in range(T + 1):
        w[t] = u[t + n : t : -1]
    xs = np.empty((N, T + 1, n))
    for i in range(N):
        for t in range(T + 1):
            base = t + i * D
            xs[i, t] = y[base + n : base : -1]
    C = np.zeros((1, n))
    C[0, 0] = 1.0
    return DataSet(w, xs, C)


def dataset_hash(ds: DataSet) -> str:
    h = hashlib.sha256()
    h.update(np.asarray([ds.n_x, ds.n_w, ds.n_experiments, ds.horizon]).tobytes())
    h.update(ds.w.tobytes())
    h.update(ds.xs.tobytes())
    if ds.C is not None:
        h.update(ds.C.tobytes())
    return h.hexdigest()[:16]


def save_dataset(ds: DataSet, path: str) -> None:
    doc = {
        "n_x": ds.n_x,
        "n_w": ds.n_w,
        "N": ds.n_experiments,
        "T": ds.horizon,
        "w": ds.w.tolist(),
        "x": [ds.xs[i].tolist() for i in range(ds.n_experiments)],
    }
    if ds.C is not None:
        doc["C"] = ds.C.tolist()
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_dataset(path: str) -> DataSet:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path}: parse error at line {e.lineno} column {e.colno}: {e.msg}") from e
    for key in ("n_x", "n_w", "N", "T", "w", "x"):
        if key not in doc:
            raise DatasetFormatError(f"{path}: missing field '{key}'")
    n_x, n_w, N, T = (int(doc[k]) for k in ("n_x", "n_w", "N", "T"))
    w = np.asarray(doc["w"], dtype=float)
    if w.shape != (T + 1, n_w):
        raise DatasetFormatError(f"{path}: field 'w' has shape {w.shape}, expected {(T + 1, n_w)}")
    if len(doc["x"]) != N:
        raise DatasetFormatError(f"{path}: expected {N} experiments, found {len(doc['x'])}")
    xs = []
    for i, xi in enumerate(doc["x"]):
        a = np.asarray(xi, dtype=float)
        if a.shape != (T + 1, n_x):
            raise DatasetFormatError(
                f"{path}: experiment {i} has shape {a.shape}, expected {(T + 1, n_x)}"
            )
        xs.append(a)
    C = np.asarray(doc["C"], dtype=float) if "C" in doc else None
    return DataSet(w, np.stack(xs), C)


def load_siso_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Read a (t, u, y) CSV with one header row; returns (u, y) sorted by t."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["t", "u", "y"]:
            raise DatasetFormatError(f"{path}: expected header 't,u,y', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1]), float(row[2])))
            except (ValueError, IndexError) as e:
                raise DatasetFormatError(f"{path}: bad row at line {lineno}: {row}") from e
    rows.sort(key=lambda r: r[0])
    u = np.array([r[1] for r in rows])
    y = np.array([r[2] for r in rows])
    return u, y
