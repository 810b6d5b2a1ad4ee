"""Solver-agnostic conic program representation.

A program holds named scalar blocks and named symmetric matrix blocks,
linear equalities over their entries, PSD cone memberships of the form
Block - Offset >= 0, an optional norm ball per block, and an objective that
is linear plus an optional sum of squared affine rows.  Symmetric blocks
are addressed by upper-triangle index in column-major order, and a
coefficient on an off-diagonal index acts on the single underlying
variable (the (i, j) and (j, i) entries are the same unknown).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

VarRef = tuple[str, int]
EqRow = tuple[tuple[tuple[VarRef, float], ...], float]


def triu_size(n: int) -> int:
    return n * (n + 1) // 2


def triu_index(i: int, j: int) -> int:
    """Column-major upper-triangle flat index of entry (i, j), i <= j."""
    if i > j:
        i, j = j, i
    return j * (j + 1) // 2 + i


def triu_pairs(n: int) -> Iterable[tuple[int, int]]:
    for j in range(n):
        for i in range(j + 1):
            yield i, j


def sym_to_triu(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    out = np.empty(triu_size(n))
    for k, (i, j) in enumerate(triu_pairs(n)):
        out[k] = M[i, j]
    return out


def triu_to_sym(v: np.ndarray, n: int) -> np.ndarray:
    M = np.empty((n, n))
    for k, (i, j) in enumerate(triu_pairs(n)):
        M[i, j] = M[j, i] = v[k]
    return M


@dataclass(frozen=True)
class ConicProgram:
    """Standard-form container; immutable (updates return new programs)."""

    scalar_blocks: dict[str, int] = field(default_factory=dict)
    sym_blocks: dict[str, int] = field(default_factory=dict)
    psd_memberships: tuple[tuple[str, np.ndarray | None], ...] = ()
    equalities: tuple[EqRow, ...] = ()
    objective: tuple[tuple[VarRef, float], ...] = ()
    objective_const: float = 0.0
    lsq_rows: tuple[tuple[tuple[tuple[VarRef, float], ...], float], ...] = ()
    norm_balls: tuple[tuple[str, float], ...] = ()
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        names = set(self.scalar_blocks) | set(self.sym_blocks)
        if len(names) != len(self.scalar_blocks) + len(self.sym_blocks):
            raise ValueError("duplicate block name")
        for name, _ in self.psd_memberships:
            if name not in self.sym_blocks:
                raise ValueError(f"PSD membership on unknown block '{name}'")
        for name, _ in self.norm_balls:
            if name not in names:
                raise ValueError(f"norm ball on unknown block '{name}'")
        for terms, _ in self.equalities:
            for ref, _ in terms:
                self._check_ref(ref)
        for ref, _ in self.objective:
            self._check_ref(ref)
        for terms, _ in self.lsq_rows:
            for ref, _ in terms:
                self._check_ref(ref)

    def _check_ref(self, ref: VarRef) -> None:
        name, idx = ref
        if name in self.scalar_blocks:
            if not 0 <= idx < self.scalar_blocks[name]:
                raise ValueError(f"index {idx} out of range for scalar block '{name}'")
        elif name in self.sym_blocks:
            if not 0 <= idx < triu_size(self.sym_blocks[name]):
                raise ValueError(f"index {idx} out of range for symmetric block '{name}'")
        else:
            raise ValueError(f"reference to undeclared block '{name}'")

    @property
    def n_variables(self) -> int:
        return sum(self.scalar_blocks.values()) + sum(triu_size(n) for n in self.sym_blocks.values())

    def block_kind(self, name: str) -> str:
        if name in self.scalar_blocks:
            return "scalar"
        if name in self.sym_blocks:
            return "sym"
        raise KeyError(name)

    def with_objective(self, objective, const: float = 0.0, lsq_rows=(), norm_balls=()) -> "ConicProgram":
        return replace(
            self,
            objective=tuple(objective),
            objective_const=float(const),
            lsq_rows=tuple(lsq_rows),
            norm_balls=tuple(norm_balls),
        )


def triu_inverse(k: int) -> tuple[int, int]:
    """Entry (i, j), i <= j, at column-major upper-triangle flat index k."""
    j = int((np.sqrt(8 * k + 1) - 1) // 2)
    while triu_size(j + 1) <= k:
        j += 1
    while triu_size(j) > k:
        j -= 1
    return k - j * (j + 1) // 2, j


def value_of(cp: ConicProgram, values: Mapping[str, np.ndarray], ref: VarRef) -> float:
    name, idx = ref
    block = np.asarray(values[name])
    if cp.block_kind(name) == "scalar":
        return float(np.ravel(block)[idx])
    i, j = triu_inverse(idx)
    return float(block[i, j])


def _row_value(cp: ConicProgram, values: Mapping[str, np.ndarray], terms, offset: float) -> float:
    flat: dict[str, np.ndarray] = {}
    for name in list(cp.scalar_blocks) + list(cp.sym_blocks):
        if name in values:
            b = np.asarray(values[name], dtype=float)
            flat[name] = b.ravel() if cp.block_kind(name) == "scalar" else sym_to_triu(b)
    acc = offset
    for (name, idx), coef in terms:
        acc += coef * flat[name][idx]
    return acc


def equality_residuals(cp: ConicProgram, values: Mapping[str, np.ndarray]) -> np.ndarray:
    flat: dict[str, np.ndarray] = {}
    for name, k in cp.scalar_blocks.items():
        flat[name] = np.asarray(values[name], dtype=float).ravel()
        if flat[name].shape[0] != k:
            raise ValueError(f"block '{name}' has wrong length")
    for name, n in cp.sym_blocks.items():
        flat[name] = sym_to_triu(np.asarray(values[name], dtype=float))
    out = np.empty(len(cp.equalities))
    for r, (terms, rhs) in enumerate(cp.equalities):
        acc = -rhs
        for (name, idx), coef in terms:
            acc += coef * flat[name][idx]
        out[r] = acc
    return out


def psd_min_eigenvalues(cp: ConicProgram, values: Mapping[str, np.ndarray]) -> dict[str, float]:
    out = {}
    for name, offset in cp.psd_memberships:
        M = np.asarray(values[name], dtype=float)
        M = 0.5 * (M + M.T)
        if offset is not None:
            M = M - offset
        out[name] = float(np.linalg.eigvalsh(M).min()) if M.size else 0.0
    return out


def norm_ball_slacks(cp: ConicProgram, values: Mapping[str, np.ndarray]) -> dict[str, float]:
    out = {}
    for name, bound in cp.norm_balls:
        b = np.asarray(values[name], dtype=float)
        out[name] = float(bound - np.linalg.norm(b.ravel()))
    return out


def objective_value(cp: ConicProgram, values: Mapping[str, np.ndarray]) -> float:
    acc = cp.objective_const
    for ref, coef in cp.objective:
        acc += coef * value_of(cp, values, ref)
    for terms, offset in cp.lsq_rows:
        acc += _row_value(cp, values, terms, -offset) ** 2
    return float(acc)


def _refs_to_doc(terms) -> list:
    return [[[name, idx], coef] for (name, idx), coef in terms]


def _refs_from_doc(doc) -> tuple:
    return tuple(((name, int(idx)), float(coef)) for (name, idx), coef in doc)


def to_json(cp: ConicProgram) -> str:
    doc = {
        "scalar_blocks": cp.scalar_blocks,
        "sym_blocks": cp.sym_blocks,
        "psd_memberships": [
            [name, None if off is None else np.asarray(off).tolist()]
            for name, off in cp.psd_memberships
        ],
        "equalities": [[_refs_to_doc(terms), rhs] for terms, rhs in cp.equalities],
        "objective": _refs_to_doc(cp.objective),
        "objective_const": cp.objective_const,
        "lsq_rows": [[_refs_to_doc(terms), off] for terms, off in cp.lsq_rows],
        "norm_balls": [[name, bound] for name, bound in cp.norm_balls],
        "metadata": cp.metadata,
    }
    return json.dumps(doc)


def from_json(text: str) -> ConicProgram:
    doc = json.loads(text)
    return ConicProgram(
        scalar_blocks={k: int(v) for k, v in doc["scalar_blocks"].items()},
        sym_blocks={k: int(v) for k, v in doc["sym_blocks"].items()},
        psd_memberships=tuple(
            (name, None if off is None else np.asarray(off, dtype=float))
            for name, off in doc["psd_memberships"]
        ),
        equalities=tuple((_refs_from_doc(t), float(rhs)) for t, rhs in doc["equalities"]),
        objective=_refs_from_doc(doc["objective"]),
        objective_const=float(doc.get("objective_const", 0.0)),
        lsq_rows=tuple((_refs_from_doc(t), float(off)) for t, off in doc.get("lsq_rows", [])),
        norm_balls=tuple((name, float(b)) for name, b in doc.get("norm_balls", [])),
        metadata=dict(doc.get("metadata", {})),
    )


def save_program(cp: ConicProgram, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_json(cp))


def load_program(path: str) -> ConicProgram:
    with open(path, "r", encoding="utf-8") as f:
        return from_json(f.read())
