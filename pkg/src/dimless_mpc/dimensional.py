"""Exact dimensional algebra: dimension vectors, pi-groups, scaling factors
and dynamic matching of similar systems.

All exponent arithmetic uses :class:`fractions.Fraction` so that results like
a 1/2 power of a length are exact, never floating-point approximations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

__all__ = [
    "DimensionVector",
    "Quantity",
    "QuantitySet",
    "PiGroup",
    "DimensionalError",
    "UnknownQuantityError",
    "UnscalableDimensionError",
    "InfeasibleMatchError",
    "validate_repeating_set",
    "compute_pi_groups",
    "scaling_factor",
    "match_similar_system",
    "pi_distance",
    "load_system_spec",
    "parse_system_spec",
    "dump_system_spec",
]

DEFAULT_DIMENSIONS = ("M", "L", "T")

MATCH_TOL = 1e-12


class DimensionalError(Exception):
    """Base class for dimensional-analysis failures."""


class UnknownQuantityError(DimensionalError, KeyError):
    """A quantity name could not be resolved."""


class UnscalableDimensionError(DimensionalError):
    """A target dimension is outside the rational span of the repeating set."""


class InfeasibleMatchError(DimensionalError):
    """Dynamic matching is over- or under-determined."""


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        if not x.is_integer():
            raise TypeError(f"refusing inexact float exponent {x!r}")
        return Fraction(int(x))
    raise TypeError(f"cannot interpret {x!r} as a rational exponent")


@dataclass(frozen=True)
class DimensionVector:
    """Rational exponents over an ordered list of fundamental dimensions."""

    exponents: tuple[Fraction, ...]

    def __init__(self, exponents: Iterable) -> None:
        object.__setattr__(
            self, "exponents", tuple(_as_fraction(e) for e in exponents)
        )

    @classmethod
    def zero(cls, n: int = len(DEFAULT_DIMENSIONS)) -> "DimensionVector":
        return cls([Fraction(0)] * n)

    @classmethod
    def from_dict(
        cls, mapping: Mapping[str, object], dimensions: Sequence[str] = DEFAULT_DIMENSIONS
    ) -> "DimensionVector":
        unknown = set(mapping) - set(dimensions)
        if unknown:
            raise UnknownQuantityError(f"unknown dimension names {sorted(unknown)}")
        return cls([_as_fraction(mapping.get(d, 0)) for d in dimensions])

    def to_dict(self, dimensions: Sequence[str] = DEFAULT_DIMENSIONS) -> dict:
        return {
            d: _exponent_json(e)
            for d, e in zip(dimensions, self.exponents)
            if e != 0
        }

    def __len__(self) -> int:
        return len(self.exponents)

    def __add__(self, other: "DimensionVector") -> "DimensionVector":
        return DimensionVector(a + b for a, b in zip(self.exponents, other.exponents))

    def __sub__(self, other: "DimensionVector") -> "DimensionVector":
        return DimensionVector(a - b for a, b in zip(self.exponents, other.exponents))

    def __neg__(self) -> "DimensionVector":
        return DimensionVector(-a for a in self.exponents)

    def scale(self, k) -> "DimensionVector":
        k = _as_fraction(k)
        return DimensionVector(k * a for a in self.exponents)

    @property
    def is_zero(self) -> bool:
        return all(e == 0 for e in self.exponents)


def _exponent_json(e: Fraction):
    return int(e) if e.denominator == 1 else f"{e.numerator}/{e.denominator}"


@dataclass(frozen=True)
class Quantity:
    name: str
    value: float
    dim: DimensionVector

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"quantity {self.name!r} has non-finite value")


@dataclass(frozen=True)
class QuantitySet:
    """Named dimensional quantities plus the designated repeating variables."""

    quantities: tuple[Quantity, ...]
    repeating: tuple[str, ...]
    dimensions: tuple[str, ...] = DEFAULT_DIMENSIONS

    def __post_init__(self):
        object.__setattr__(self, "quantities", tuple(self.quantities))
        object.__setattr__(self, "repeating", tuple(self.repeating))
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        names = [q.name for q in self.quantities]
        if len(set(names)) != len(names):
            raise ValueError("duplicate quantity names")
        for q in self.quantities:
            if len(q.dim) != len(self.dimensions):
                raise ValueError(
                    f"quantity {q.name!r} has {len(q.dim)} dimension exponents, "
                    f"expected {len(self.dimensions)}"
                )
        known = set(names)
        for r in self.repeating:
            if r not in known:
                raise UnknownQuantityError(f"repeating variable {r!r} not in set")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(q.name for q in self.quantities)

    @property
    def non_repeating(self) -> tuple[str, ...]:
        rep = set(self.repeating)
        return tuple(q.name for q in self.quantities if q.name not in rep)

    def __getitem__(self, name: str) -> Quantity:
        for q in self.quantities:
            if q.name == name:
                return q
        raise UnknownQuantityError(name)

    def value(self, name: str) -> float:
        return self[name].value

    def values(self) -> dict[str, float]:
        return {q.name: q.value for q in self.quantities}

    def with_values(self, new_values: Mapping[str, float]) -> "QuantitySet":
        unknown = set(new_values) - set(self.names)
        if unknown:
            raise UnknownQuantityError(f"unknown quantities {sorted(unknown)}")
        qs = tuple(
            Quantity(q.name, float(new_values.get(q.name, q.value)), q.dim)
            for q in self.quantities
        )
        return QuantitySet(qs, self.repeating, self.dimensions)

    def present_dimensions(self) -> tuple[int, ...]:
        """Indices of fundamental dimensions with a nonzero exponent somewhere."""
        present = []
        for i in range(len(self.dimensions)):
            if any(q.dim.exponents[i] != 0 for q in self.quantities):
                present.append(i)
        return tuple(present)


@dataclass(frozen=True)
class PiGroup:
    """A dimensionless monomial of quantities, evaluated at current values."""

    monomial: Mapping[str, Fraction]
    value: float

    def __post_init__(self):
        object.__setattr__(self, "monomial", dict(self.monomial))

    def symbol(self) -> str:
        parts = []
        for name, e in self.monomial.items():
            if e == 1:
                parts.append(name)
            elif e.denominator == 1:
                parts.append(f"{name}^{e.numerator}")
            else:
                parts.append(f"{name}^({e.numerator}/{e.denominator})")
        return " * ".join(parts)

    def evaluate(self, values: Mapping[str, float]) -> float:
        out = 1.0
        for name, e in self.monomial.items():
            out *= values[name] ** float(e)
        return out


# --------------------------------------------------------------------------
# exact rational linear algebra
# --------------------------------------------------------------------------

def _rank(rows: list[list[Fraction]]) -> int:
    rows = [row[:] for row in rows]
    rank = 0
    ncols = len(rows[0]) if rows else 0
    for col in range(ncols):
        pivot = next((r for r in range(rank, len(rows)) if rows[r][col] != 0), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        prow = rows[rank]
        for r in range(len(rows)):
            if r != rank and rows[r][col] != 0:
                f = rows[r][col] / prow[col]
                rows[r] = [a - f * b for a, b in zip(rows[r], prow)]
        rank += 1
        if rank == len(rows):
            break
    return rank


def _solve_exact(
    A: list[list[Fraction]], b: list[Fraction]
) -> list[Fraction] | None:
    """Solve A x = b over the rationals.

    Requires the columns of A to be linearly independent (unique solution if
    one exists). Returns None when the system is inconsistent.
    """
    m, n = len(A), len(A[0]) if A else 0
    aug = [A[i][:] + [b[i]] for i in range(m)]
    rank = 0
    pivot_cols: list[int] = []
    for col in range(n):
        pivot = next((r for r in range(rank, m) if aug[r][col] != 0), None)
        if pivot is None:
            continue
        aug[rank], aug[pivot] = aug[pivot], aug[rank]
        prow = aug[rank]
        inv = 1 / prow[col]
        aug[rank] = [a * inv for a in prow]
        for r in range(m):
            if r != rank and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [a - f * p for a, p in zip(aug[r], aug[rank])]
        pivot_cols.append(col)
        rank += 1
    if rank < n:
        raise ValueError("columns are linearly dependent")
    for r in range(rank, m):
        if aug[r][n] != 0:
            return None
    x = [Fraction(0)] * n
    for i, col in enumerate(pivot_cols):
        x[col] = aug[i][n]
    return x


def _repeating_matrix(qs: QuantitySet) -> list[list[Fraction]]:
    """Dimension exponents of the repeating variables, one column each."""
    reps = [qs[name] for name in qs.repeating]
    ndim = len(qs.dimensions)
    return [[rep.dim.exponents[i] for rep in reps] for i in range(ndim)]


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def validate_repeating_set(qs: QuantitySet) -> bool:
    """True iff the repeating variables are dimensionally independent and
    span every fundamental dimension present in the set."""
    present = qs.present_dimensions()
    r = len(qs.repeating)
    if r != len(present):
        return False
    cols = [[qs[name].dim.exponents[i] for i in present] for name in qs.repeating]
    # a repeating variable must not involve an absent dimension
    for name in qs.repeating:
        for i, e in enumerate(qs[name].dim.exponents):
            if e != 0 and i not in present:
                return False
    return _rank(cols) == r


def _pi_exponents(qs: QuantitySet, target: DimensionVector) -> list[Fraction] | None:
    A = _repeating_matrix(qs)
    return _solve_exact(A, list(target.exponents))


def compute_pi_groups(qs: QuantitySet) -> list[PiGroup]:
    """One dimensionless group per non-repeating quantity, with that quantity
    carrying exponent +1 and the repeating variables cancelling its dimension."""
    if not validate_repeating_set(qs):
        raise DimensionalError("repeating set is not dimensionally independent")
    groups = []
    for name in qs.non_repeating:
        q = qs[name]
        alphas = _pi_exponents(qs, -q.dim)
        if alphas is None:
            raise DimensionalError(
                f"internal invariant violation: cannot cancel dimension of {name!r}"
            )
        monomial: dict[str, Fraction] = {name: Fraction(1)}
        for rep_name, a in zip(qs.repeating, alphas):
            if a != 0:
                monomial[rep_name] = a
        value = 1.0
        values = qs.values()
        for qn, e in monomial.items():
            value *= values[qn] ** float(e)
        groups.append(PiGroup(monomial, value))
    return groups


def scaling_factor(target: DimensionVector, qs: QuantitySet) -> float:
    """The unique monomial in the repeating variables whose dimension equals
    ``target``, evaluated at the current quantity values."""
    if target.is_zero:
        return 1.0
    betas = _pi_exponents(qs, target)
    if betas is None:
        raise UnscalableDimensionError(
            f"dimension {tuple(map(str, target.exponents))} is not in the span "
            f"of the repeating variables {qs.repeating}"
        )
    out = 1.0
    for name, b in zip(qs.repeating, betas):
        out *= qs.value(name) ** float(b)
    return out


def match_similar_system(
    reference: QuantitySet,
    fixed: Iterable[str],
    new_values: Mapping[str, float],
) -> QuantitySet:
    """Build a dynamically similar quantity set.

    Quantities in ``fixed`` keep their reference values, ``new_values``
    assigns fresh values, and every remaining value is solved from equality
    of the pi-group values, which is linear in log-space with exact rational
    coefficients.
    """
    fixed = set(fixed)
    unknown_names = [
        n for n in reference.names if n not in fixed and n not in new_values
    ]
    known: dict[str, float] = {n: reference.value(n) for n in fixed}
    for n, v in new_values.items():
        reference[n]  # raises UnknownQuantityError on bad names
        known[n] = float(v)
    for n, v in known.items():
        if v <= 0:
            raise InfeasibleMatchError(f"matching requires positive values, {n}={v}")
    if any(reference.value(n) <= 0 for n in reference.names):
        raise InfeasibleMatchError("reference values must be positive for matching")

    groups = compute_pi_groups(reference)
    idx = {n: j for j, n in enumerate(unknown_names)}
    rows: list[list[Fraction]] = []
    rhs: list[float] = []
    for g in groups:
        row = [Fraction(0)] * len(unknown_names)
        b = math.log(g.value)
        for name, e in g.monomial.items():
            if name in idx:
                row[idx[name]] = e
            else:
                b -= float(e) * math.log(known[name])
        rows.append(row)
        rhs.append(b)

    # gaussian elimination with exact pivots and float right-hand sides
    rank = 0
    pivot_cols: list[int] = []
    n = len(unknown_names)
    for col in range(n):
        pivot = next((r for r in range(rank, len(rows)) if rows[r][col] != 0), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        rhs[rank], rhs[pivot] = rhs[pivot], rhs[rank]
        inv = 1 / rows[rank][col]
        rows[rank] = [a * inv for a in rows[rank]]
        rhs[rank] *= float(inv)
        for r in range(len(rows)):
            if r != rank and rows[r][col] != 0:
                f = rows[r][col]
                rows[r] = [a - f * p for a, p in zip(rows[r], rows[rank])]
                rhs[r] -= float(f) * rhs[rank]
        pivot_cols.append(col)
        rank += 1
    if rank < n:
        free = [unknown_names[j] for j in range(n) if j not in pivot_cols]
        raise InfeasibleMatchError(
            f"matching is under-determined; unresolved quantities: {free}"
        )
    for r in range(rank, len(rows)):
        if abs(rhs[r]) > MATCH_TOL * 10:
            raise InfeasibleMatchError(
                f"matching is over-determined; residual {rhs[r]:.3e} in log-pi space"
            )

    solved = dict(known)
    for i, col in enumerate(pivot_cols):
        solved[unknown_names[col]] = math.exp(rhs[i])
    return reference.with_values(solved)


def pi_distance(a: QuantitySet, b: QuantitySet) -> float:
    """Euclidean norm of the difference of log-pi-group value vectors."""
    if a.names != b.names or a.repeating != b.repeating:
        raise DimensionalError("quantity sets are not structurally comparable")
    ga = compute_pi_groups(a)
    gb = compute_pi_groups(b)
    total = 0.0
    for pa, pb in zip(ga, gb):
        if pa.value <= 0 or pb.value <= 0:
            raise ValueError("pi-group value must be positive for log distance")
        total += (math.log(pa.value) - math.log(pb.value)) ** 2
    return math.sqrt(total)


# --------------------------------------------------------------------------
# system-spec file format
# --------------------------------------------------------------------------

def parse_system_spec(data: Mapping) -> QuantitySet:
    dimensions = tuple(data.get("dimensions", DEFAULT_DIMENSIONS))
    quantities = tuple(
        Quantity(
            q["name"],
            float(q["value"]),
            DimensionVector.from_dict(q.get("dim", {}), dimensions),
        )
        for q in data["quantities"]
    )
    return QuantitySet(quantities, tuple(data["repeating"]), dimensions)


def load_system_spec(path) -> QuantitySet:
    with open(path) as f:
        return parse_system_spec(json.load(f))


def dump_system_spec(qs: QuantitySet) -> dict:
    return {
        "dimensions": list(qs.dimensions),
        "quantities": [
            {"name": q.name, "value": q.value, "dim": q.dim.to_dict(qs.dimensions)}
            for q in qs.quantities
        ],
        "repeating": list(qs.repeating),
    }
