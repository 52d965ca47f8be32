"""Or-set uncertain relation data model.

An uncertain relation is a set of tuples whose cells hold finite sets of
candidate values with probabilities ("attribute worlds"). A possible world
picks one value per cell; its probability is the product of picked-value
probabilities. A sub-relation retains per-cell subsets of the choices
(optionally as several instance-disjoint rows per tuple) plus a global
recalibration factor gamma.

All types are immutable after construction and safe to share across
concurrent readers.
"""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .errors import AssignmentError, NotInSubRelationError, SchemaError

PROB_SUM_TOL = 1e-9
MASS_TOL = 1e-12

KINDS = ("string", "int", "float", "date")

_PY_KINDS = {
    "string": str,
    "int": int,
    "float": (int, float),
    "date": datetime.date,
}


def check_value_kind(value, kind: str) -> None:
    """Raise SchemaError if ``value`` does not conform to a domain kind.

    ``None`` is the null marker and is allowed in every domain.
    """
    if value is None:
        return
    if kind not in _PY_KINDS:
        raise SchemaError(f"unknown domain kind {kind!r}")
    ok = isinstance(value, _PY_KINDS[kind])
    if kind in ("int", "float") and isinstance(value, bool):
        ok = False
    if not ok:
        raise SchemaError(f"value {value!r} does not match domain kind {kind!r}")


def value_sort_key(value):
    """Deterministic total order over cell values of mixed kinds."""
    if value is None:
        return (0, "")
    if isinstance(value, bool):
        return (1, str(value))
    if isinstance(value, (int, float)):
        return (2, float(value))
    if isinstance(value, datetime.date):
        return (3, value.isoformat())
    return (4, str(value))


@dataclass(frozen=True)
class AttributeValue:
    """One candidate value with its probability (probability > 0)."""

    value: object
    prob: float

    def __post_init__(self):
        if not (self.prob > 0.0):
            raise SchemaError(f"choice {self.value!r} has non-positive probability {self.prob}")
        if self.prob > 1.0 + PROB_SUM_TOL:
            raise SchemaError(f"choice {self.value!r} has probability {self.prob} > 1")


@dataclass(frozen=True)
class AttributeWorld:
    """The or-set of one cell: distinct candidate values summing to 1."""

    choices: tuple[AttributeValue, ...]
    domain: str = "string"

    def __post_init__(self):
        if not self.choices:
            raise SchemaError("attribute world must have at least one choice")
        object.__setattr__(self, "choices", tuple(self.choices))
        seen = set()
        for c in self.choices:
            key = (type(c.value).__name__, c.value)
            if key in seen:
                raise SchemaError(f"duplicate choice value {c.value!r}")
            seen.add(key)
            check_value_kind(c.value, self.domain)
        total = math.fsum(c.prob for c in self.choices)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise SchemaError(f"attribute world probabilities sum to {total}, not 1")
        object.__setattr__(self, "_values", tuple(c.value for c in self.choices))
        object.__setattr__(self, "_probs", tuple(c.prob for c in self.choices))

    def __len__(self) -> int:
        return len(self.choices)

    @property
    def values(self) -> tuple:
        return self._values

    @property
    def probs(self) -> tuple[float, ...]:
        return self._probs

    def index_of(self, value) -> int:
        for i, c in enumerate(self.choices):
            if c.value == value and type(c.value) is type(value):
                return i
        raise KeyError(value)


def attribute_world(pairs: Iterable[tuple[object, float]], domain: str = "string",
                    drop_zeros: bool = False) -> AttributeWorld:
    """Build an AttributeWorld from (value, prob) pairs.

    With ``drop_zeros`` choices with prob <= 0 are silently stripped
    (the loader warns separately); they are observationally absent from
    every possible world.
    """
    items = list(pairs)
    if drop_zeros:
        items = [(v, p) for v, p in items if p > 0.0]
    return AttributeWorld(tuple(AttributeValue(v, float(p)) for v, p in items), domain)


@dataclass(frozen=True)
class UncertainTuple:
    """A sequence of attribute worlds; one row of the uncertain relation."""

    cells: tuple[AttributeWorld, ...]
    tuple_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))

    @property
    def arity(self) -> int:
        return len(self.cells)

    def choice_counts(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.cells)

    def instance_count(self) -> int:
        n = 1
        for c in self.cells:
            n *= len(c)
        return n


@dataclass(frozen=True)
class Schema:
    """Attribute names and domain kinds, in column order."""

    attributes: tuple[tuple[str, str], ...]

    def __post_init__(self):
        names = [n for n, _ in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate attribute names")
        for n, k in self.attributes:
            if k not in KINDS:
                raise SchemaError(f"attribute {n!r} has unknown kind {k!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.attributes)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(k for _, k in self.attributes)

    def index(self, name: str) -> int:
        for i, (n, _) in enumerate(self.attributes):
            if n == name:
                return i
        raise KeyError(name)

    def kind_of(self, name: str) -> str:
        return self.attributes[self.index(name)][1]

    def __len__(self) -> int:
        return len(self.attributes)


@dataclass(frozen=True)
class UncertainRelation:
    """n uncertain tuples over a fixed schema of s attributes."""

    schema: Schema
    tuples: tuple[UncertainTuple, ...]

    def __post_init__(self):
        object.__setattr__(self, "tuples", tuple(self.tuples))
        s = len(self.schema)
        for t in self.tuples:
            if t.arity != s:
                raise SchemaError(f"tuple {t.tuple_id} has arity {t.arity}, schema wants {s}")
            for (name, kind), cell in zip(self.schema.attributes, t.cells):
                if cell.domain != kind:
                    raise SchemaError(
                        f"tuple {t.tuple_id} attribute {name!r}: cell domain "
                        f"{cell.domain!r} != schema kind {kind!r}")

    @property
    def n(self) -> int:
        return len(self.tuples)

    @property
    def s(self) -> int:
        return len(self.schema)

    def world_count(self) -> int:
        total = 1
        for t in self.tuples:
            total *= t.instance_count()
        return total

    def cell(self, i: int, j: int) -> AttributeWorld:
        return self.tuples[i].cells[j]


def relation(schema: Sequence[tuple[str, str]],
             rows: Sequence[Sequence[Iterable[tuple[object, float]] | object]]) -> UncertainRelation:
    """Convenience builder.

    Each cell spec is either a bare scalar (a certain value) or an iterable
    of (value, prob) pairs.
    """
    sch = Schema(tuple((n, k) for n, k in schema))
    tuples = []
    for i, row in enumerate(rows):
        cells = []
        for (name, kind), spec in zip(sch.attributes, row):
            if isinstance(spec, (list, tuple)) and spec and isinstance(spec[0], (list, tuple)):
                cells.append(attribute_world(spec, kind))
            else:
                cells.append(attribute_world([(spec, 1.0)], kind))
        tuples.append(UncertainTuple(tuple(cells), tuple_id=i))
    return UncertainRelation(sch, tuple(tuples))


@dataclass(frozen=True)
class WorldAssignment:
    """One choice index per cell; picks[i][j] selects from tuple i, attribute j."""

    picks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "picks", tuple(tuple(p) for p in self.picks))

    def pick(self, i: int, j: int) -> int:
        return self.picks[i][j]

    def validate(self, rel: UncertainRelation) -> None:
        if len(self.picks) != rel.n:
            raise AssignmentError(f"assignment covers {len(self.picks)} tuples, relation has {rel.n}")
        for i, row in enumerate(self.picks):
            if len(row) != rel.s:
                raise AssignmentError(f"tuple {i}: assignment covers {len(row)} cells, schema has {rel.s}")
            for j, p in enumerate(row):
                k = len(rel.cell(i, j))
                if not (0 <= p < k):
                    raise AssignmentError(f"tuple {i} attribute {j}: pick {p} out of range [0,{k})")

    def values(self, rel: UncertainRelation) -> tuple[tuple, ...]:
        return tuple(
            tuple(rel.cell(i, j).choices[p].value for j, p in enumerate(row))
            for i, row in enumerate(self.picks))


# A Row retains, per attribute, a subset of the base cell's choice indices.
Row = tuple[frozenset[int], ...]


def identity_row(t: UncertainTuple) -> Row:
    return tuple(frozenset(range(len(c))) for c in t.cells)


def rows_instance_disjoint(r1: Row, r2: Row) -> bool:
    """True if some attribute's retained sets are disjoint (no shared instance)."""
    return any(not (a & b) for a, b in zip(r1, r2))


@dataclass(frozen=True)
class SubRelation:
    """Retained-choice subsets per tuple (one or more disjoint rows) plus gamma.

    Invariants enforced here: retained indices exist in the base relation,
    every row is non-empty in every attribute (an annihilated tuple is a
    construction error), rows of one tuple are pairwise instance-disjoint,
    and gamma >= 1 (it recalibrates retained worlds to conditional
    probabilities, so it is a reciprocal of a probability).
    """

    base: UncertainRelation
    rows: tuple[tuple[Row, ...], ...]
    gamma: float = 1.0

    def __post_init__(self):
        if len(self.rows) != self.base.n:
            raise SchemaError(f"sub-relation covers {len(self.rows)} tuples, base has {self.base.n}")
        norm = []
        for i, tuple_rows in enumerate(self.rows):
            if not tuple_rows:
                raise SchemaError(f"tuple {i} has no rows (annihilated)")
            fixed = []
            for row in tuple_rows:
                if len(row) != self.base.s:
                    raise SchemaError(f"tuple {i}: row arity {len(row)} != {self.base.s}")
                row = tuple(frozenset(a) for a in row)
                for j, retained in enumerate(row):
                    k = len(self.base.cell(i, j))
                    if not retained:
                        raise SchemaError(f"tuple {i} attribute {j}: empty retained set")
                    if not all(0 <= c < k for c in retained):
                        raise SchemaError(f"tuple {i} attribute {j}: retained index out of range")
                fixed.append(row)
            for a in range(len(fixed)):
                for b in range(a + 1, len(fixed)):
                    if not rows_instance_disjoint(fixed[a], fixed[b]):
                        raise SchemaError(f"tuple {i}: rows {a} and {b} share an instance")
            norm.append(tuple(fixed))
        object.__setattr__(self, "rows", tuple(norm))
        if self.gamma < 1.0 - PROB_SUM_TOL:
            raise SchemaError(f"gamma {self.gamma} < 1")

    @classmethod
    def identity(cls, rel: UncertainRelation, gamma: float = 1.0) -> "SubRelation":
        return cls(rel, tuple((identity_row(t),) for t in rel.tuples), gamma)

    def is_single_row(self) -> bool:
        return all(len(tr) == 1 for tr in self.rows)

    def tuple_mass(self, i: int) -> float:
        """Base-measure mass of tuple i's retained instance set."""
        total = 0.0
        for row in self.rows[i]:
            m = 1.0
            for j, retained in enumerate(row):
                probs = self.base.cell(i, j).probs
                m *= math.fsum(probs[c] for c in retained)
            total += m
        return total

    def row_of_picks(self, i: int, picks: Sequence[int]) -> int:
        """Index of the (unique) row containing these picks, or -1."""
        for r, row in enumerate(self.rows[i]):
            if all(p in retained for p, retained in zip(picks, row)):
                return r
        return -1


@dataclass(frozen=True)
class QualityReport:
    """Approximation quality of a sub-relation against its base + constraints.

    pc: total consistent mass of the base relation; cr/ir: consistent and
    inconsistent mass retained; quality = cr/pc - ir (1 is optimal).
    ``metadata`` carries estimation provenance (seed, sample counts, error
    bound, confidence) when method == "sampled".
    """

    pc: float
    cr: float
    ir: float
    quality: float
    method: str  # "exact" | "sampled"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        tol = 1e-6
        if not (-tol <= self.pc <= 1 + tol):
            raise SchemaError(f"pc {self.pc} out of [0,1]")
        if self.cr < -tol or self.ir < -tol:
            raise SchemaError("negative retained mass")
        if self.method == "exact" and self.cr > self.pc + 1e-9:
            raise SchemaError(f"cr {self.cr} exceeds pc {self.pc}")
        if self.method == "exact" and self.quality > 1 + 1e-9:
            raise SchemaError(f"quality {self.quality} exceeds 1")


def world_probability(rel: UncertainRelation, w: WorldAssignment) -> float:
    """Probability of one possible world under independence (product of picks)."""
    w.validate(rel)
    p = 1.0
    for i, row in enumerate(w.picks):
        for j, pick in enumerate(row):
            p *= rel.cell(i, j).choices[pick].prob
    return p


def subrelation_total_mass(sub: SubRelation) -> float:
    """Base-measure mass of the world set represented by ``sub``.

    For the identity sub-relation this is 1 (up to float tolerance): each
    tuple factor is the sum over its disjoint rows of the product of
    retained-choice mass per attribute.
    """
    total = 1.0
    for i in range(sub.base.n):
        total *= sub.tuple_mass(i)
    return total


def subrelation_world_probability(sub: SubRelation, w: WorldAssignment) -> float:
    """gamma-recalibrated probability of a world representable by ``sub``."""
    w.validate(sub.base)
    for i, picks in enumerate(w.picks):
        if sub.row_of_picks(i, picks) < 0:
            raise NotInSubRelationError(f"tuple {i}: picks {picks} not within any retained row")
    return sub.gamma * world_probability(sub.base, w)
