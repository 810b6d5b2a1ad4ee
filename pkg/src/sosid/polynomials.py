"""Sparse multivariate polynomials and monomial-degree bookkeeping.

Exponent vectors are plain tuples of non-negative ints.  All bases are
kept in graded lexicographic order (lower total degree first, ties broken
by ascending lexicographic comparison of the exponent tuple), which keeps
basis indices deterministic across runs.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

Degree = tuple[int, ...]


def total_degree(alpha: Sequence[int]) -> int:
    return int(sum(alpha))


def graded_lex_key(alpha: Sequence[int]) -> tuple:
    return (sum(alpha), tuple(alpha))


def monomial_eval(alpha: Sequence[int], v: Sequence[float]) -> float:
    """Evaluate v**alpha = prod_d v[d]**alpha[d]; the empty product is 1."""
    if len(v) != len(alpha):
        raise ValueError(f"dimension mismatch: len(v)={len(v)}, len(alpha)={len(alpha)}")
    out = 1.0
    for vd, ad in zip(v, alpha):
        if ad:
            out *= float(vd) ** ad
    return out


def degree_sum(a: Sequence[int], b: Sequence[int]) -> Degree:
    return tuple(x + y for x, y in zip(a, b))


def factor_coordinate(alpha: Sequence[int], i: int) -> int:
    """Coordinate read by factor ``i`` (0-based) of the multilinear lift of alpha.

    Returns the smallest coordinate d with alpha[0]+...+alpha[d] >= i+1, so the
    multiset {factor_coordinate(alpha, i)} contains coordinate d exactly
    alpha[d] times.
    """
    m = total_degree(alpha)
    if not 0 <= i < m:
        raise IndexError(f"factor index {i} out of range for |alpha|={m}")
    acc = 0
    for d, ad in enumerate(alpha):
        acc += ad
        if acc >= i + 1:
            return d
    raise AssertionError("unreachable")


def _compositions(total: int, nvars: int) -> Iterator[Degree]:
    if nvars == 1:
        yield (total,)
        return
    for k in range(total + 1):
        for rest in _compositions(total - k, nvars - 1):
            yield (k,) + rest


class MonomialBasis:
    """Ordered, duplicate-free list of exponent vectors (graded lex)."""

    __slots__ = ("degrees", "nvars", "_index")

    def __init__(self, degrees: Iterable[Sequence[int]], nvars: int | None = None):
        degs = sorted({tuple(int(e) for e in d) for d in degrees}, key=graded_lex_key)
        if not degs:
            raise ValueError("empty basis")
        if any(e < 0 for d in degs for e in d):
            raise ValueError("negative exponent in basis")
        n = len(degs[0]) if nvars is None else nvars
        if any(len(d) != n for d in degs):
            raise ValueError("inconsistent exponent lengths in basis")
        self.degrees: tuple[Degree, ...] = tuple(degs)
        self.nvars = n
        self._index = {d: k for k, d in enumerate(self.degrees)}

    def index(self, alpha: Sequence[int]) -> int:
        return self._index[tuple(alpha)]

    def __contains__(self, alpha) -> bool:
        return tuple(alpha) in self._index

    def __len__(self) -> int:
        return len(self.degrees)

    def __iter__(self) -> Iterator[Degree]:
        return iter(self.degrees)

    def __getitem__(self, k: int) -> Degree:
        return self.degrees[k]

    def __eq__(self, other) -> bool:
        return isinstance(other, MonomialBasis) and self.degrees == other.degrees

    def __hash__(self) -> int:
        return hash(self.degrees)

    @property
    def max_degree(self) -> int:
        return max(total_degree(d) for d in self.degrees)

    def __repr__(self) -> str:
        return f"MonomialBasis({list(self.degrees)!r})"


def basis_up_to_degree(nvars: int, max_degree: int) -> MonomialBasis:
    """All exponent vectors with total degree <= max_degree, graded lex order."""
    if nvars < 1:
        raise ValueError("nvars must be >= 1")
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    degs = [d for total in range(max_degree + 1) for d in _compositions(total, nvars)]
    return MonomialBasis(degs, nvars)


class Polynomial:
    """Real-coefficient sparse polynomial; zero coefficients are never stored.

    Instances are treated as immutable values after construction.
    """

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Mapping[Sequence[int], float] | None = None):
        if nvars < 1:
            raise ValueError("nvars must be >= 1")
        self.nvars = int(nvars)
        clean: dict[Degree, float] = {}
        for alpha, c in (terms or {}).items():
            key = tuple(int(e) for e in alpha)
            if len(key) != self.nvars:
                raise ValueError(f"exponent {key} has wrong length (nvars={self.nvars})")
            if any(e < 0 for e in key):
                raise ValueError(f"negative exponent in {key}")
            c = float(c)
            if c != 0.0:
                clean[key] = c
        self.terms: dict[Degree, float] = clean

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, c: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def variable(cls, nvars: int, d: int, power: int = 1) -> "Polynomial":
        e = [0] * nvars
        e[d] = power
        return cls(nvars, {tuple(e): 1.0})

    @classmethod
    def monomial(cls, alpha: Sequence[int], c: float = 1.0) -> "Polynomial":
        return cls(len(alpha), {tuple(alpha): c})

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        return max((total_degree(a) for a in self.terms), default=0)

    def support(self) -> set[Degree]:
        return set(self.terms)

    def evaluate(self, v: Sequence[float]) -> float:
        if len(v) != self.nvars:
            raise ValueError(f"dimension mismatch: len(v)={len(v)}, nvars={self.nvars}")
        return float(sum(c * monomial_eval(a, v) for a, c in self.terms.items()))

    def evaluate_many(self, V: np.ndarray) -> np.ndarray:
        """Evaluate at a batch of points, V of shape (B, nvars)."""
        V = np.asarray(V, dtype=float)
        if V.ndim != 2 or V.shape[1] != self.nvars:
            raise ValueError(f"expected (B, {self.nvars}) array, got {V.shape}")
        out = np.zeros(V.shape[0])
        for alpha, c in self.terms.items():
            term = np.full(V.shape[0], c)
            for d, e in enumerate(alpha):
                if e:
                    term *= V[:, d] ** e
            out += term
        return out

    def _check_compatible(self, other: "Polynomial") -> None:
        if self.nvars != other.nvars:
            raise ValueError(f"variable count mismatch: {self.nvars} vs {other.nvars}")

    def __add__(self, other) -> "Polynomial":
        if np.isscalar(other):
            other = Polynomial.constant(self.nvars, float(other))
        self._check_compatible(other)
        terms = dict(self.terms)
        for a, c in other.terms.items():
            terms[a] = terms.get(a, 0.0) + c
        return Polynomial(self.nvars, terms)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.nvars, {a: -c for a, c in self.terms.items()})

    def __sub__(self, other) -> "Polynomial":
        if np.isscalar(other):
            other = Polynomial.constant(self.nvars, float(other))
        return self + (-other)

    def __mul__(self, other) -> "Polynomial":
        if np.isscalar(other):
            return self.scale(float(other))
        self._check_compatible(other)
        terms: dict[Degree, float] = {}
        for a1, c1 in self.terms.items():
            for a2, c2 in other.terms.items():
                key = degree_sum(a1, a2)
                terms[key] = terms.get(key, 0.0) + c1 * c2
        return Polynomial(self.nvars, terms)

    __rmul__ = __mul__

    def scale(self, c: float) -> "Polynomial":
        return Polynomial(self.nvars, {a: c * v for a, v in self.terms.items()})

    def differentiate(self, d: int) -> "Polynomial":
        terms = {}
        for a, c in self.terms.items():
            if a[d]:
                e = list(a)
                e[d] -= 1
                terms[tuple(e)] = terms.get(tuple(e), 0.0) + c * a[d]
        return Polynomial(self.nvars, terms)

    def substitute_affine(
        self,
        rows: Sequence[tuple[Mapping[int, float], float]],
        new_nvars: int,
    ) -> "Polynomial":
        """Compose with an affine map of the variables.

        ``rows[d] = (coeffs, const)`` sends source variable d to
        ``sum_t coeffs[t] * u_t + const`` in the target variable space.
        """
        if len(rows) != self.nvars:
            raise ValueError(f"need one affine row per variable ({self.nvars}), got {len(rows)}")
        images: list[Polynomial] = []
        for coeffs, const in rows:
            terms: dict[Degree, float] = {}
            for t, c in coeffs.items():
                if not 0 <= t < new_nvars:
                    raise ValueError(f"target variable {t} out of range (new_nvars={new_nvars})")
                e = [0] * new_nvars
                e[t] = 1
                terms[tuple(e)] = terms.get(tuple(e), 0.0) + float(c)
            if const:
                terms[(0,) * new_nvars] = terms.get((0,) * new_nvars, 0.0) + float(const)
            images.append(Polynomial(new_nvars, terms))
        out = Polynomial.zero(new_nvars)
        pow_cache: dict[tuple[int, int], Polynomial] = {}
        for alpha, c in self.terms.items():
            term = Polynomial.constant(new_nvars, c)
            for d, e in enumerate(alpha):
                if not e:
                    continue
                key = (d, e)
                if key not in pow_cache:
                    p = images[d]
                    acc = p
                    for _ in range(e - 1):
                        acc = acc * p
                    pow_cache[key] = acc
                term = term * pow_cache[key]
            out = out + term
        return out

    def embed(self, slot_of_var: Sequence[int], new_nvars: int) -> "Polynomial":
        """Relabel variable d to slot_of_var[d] in a larger variable space."""
        rows = [({int(s): 1.0}, 0.0) for s in slot_of_var]
        return self.substitute_affine(rows, new_nvars)

    def allclose(self, other: "Polynomial", tol: float = 1e-12) -> bool:
        self._check_compatible(other)
        keys = set(self.terms) | set(other.terms)
        return all(abs(self.terms.get(k, 0.0) - other.terms.get(k, 0.0)) <= tol for k in keys)

    def max_coefficient(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def to_string(self, names: Sequence[str] | None = None) -> str:
        if self.is_zero():
            return "0"
        if names is None:
            names = [f"x{d}" for d in range(self.nvars)]
        parts = []
        for alpha in sorted(self.terms, key=graded_lex_key):
            c = self.terms[alpha]
            factors = [f"{names[d]}^{e}" if e > 1 else names[d] for d, e in enumerate(alpha) if e]
            body = "*".join(factors)
            parts.append(f"{c:g}*{body}" if body else f"{c:g}")
        return " + ".join(parts)

    def __repr__(self) -> str:
        return f"Polynomial({self.nvars}, {self.to_string()})"
