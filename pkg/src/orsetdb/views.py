"""Uniform read access over relations, sub-relations and working states.

A view is the base relation plus, per tuple, one or more instance-disjoint
rows of retained choice-index sets. The identity view of a relation has a
single full row per tuple. Values exposed to constraint evaluation are
always materialized from the base relation's cells.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterator, Sequence

from .errors import ArityBoundError
from .model import SubRelation, UncertainRelation

INSTANCE_ENUM_BOUND = 10 ** 6


class RelationView:
    def __init__(self, base: UncertainRelation, rows: Sequence[Sequence[Sequence[Sequence[int]]]]):
        self.base = base
        self.rows = tuple(
            tuple(tuple(tuple(sorted(a)) for a in row) for row in tuple_rows)
            for tuple_rows in rows)
        self._union_cache: dict[tuple[int, int], tuple[int, ...]] = {}
        self._certain_cache: dict[int, tuple] = {}

    @classmethod
    def from_relation(cls, rel: UncertainRelation) -> "RelationView":
        return cls(rel, tuple(
            (tuple(tuple(range(len(c))) for c in t.cells),) for t in rel.tuples))

    @classmethod
    def from_subrelation(cls, sub: SubRelation) -> "RelationView":
        return cls(sub.base, sub.rows)

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def s(self) -> int:
        return self.base.s

    @property
    def schema(self):
        return self.base.schema

    def values_of(self, i: int, j: int) -> tuple:
        return self.base.cell(i, j).values

    def probs_of(self, i: int, j: int) -> tuple[float, ...]:
        return self.base.cell(i, j).probs

    def retained_union(self, i: int, j: int) -> tuple[int, ...]:
        key = (i, j)
        got = self._union_cache.get(key)
        if got is None:
            u: set[int] = set()
            for row in self.rows[i]:
                u.update(row[j])
            got = tuple(sorted(u))
            self._union_cache[key] = got
        return got

    def cell_certain(self, i: int, j: int) -> bool:
        return len(self.retained_union(i, j)) == 1

    def tuple_uncertain_on(self, i: int, slots: Sequence[int]) -> bool:
        return any(not self.cell_certain(i, j) for j in slots)

    def certain_values(self, i: int) -> tuple:
        """Full-width value tuple with None placeholders in uncertain cells.

        Callers must only read slots they verified to be certain; the
        placeholder is indistinguishable from a null marker.
        """
        got = self._certain_cache.get(i)
        if got is None:
            out = []
            for j in range(self.s):
                u = self.retained_union(i, j)
                out.append(self.values_of(i, j)[u[0]] if len(u) == 1 else None)
            got = tuple(out)
            self._certain_cache[i] = got
        return got

    def possible_keys(self, i: int, slots: Sequence[int]) -> set[tuple]:
        """Over-approximation of the key projections tuple i can realize."""
        options = [[self.values_of(i, j)[c] for c in self.retained_union(i, j)] for j in slots]
        size = 1
        for o in options:
            size *= len(o)
        if size > 4096:
            # cheap cap: the union product is already an over-approximation
            options = [o[:4096 // max(1, len(options))] or o[:1] for o in options]
        return set(itertools.product(*options))

    def tuple_instance_count(self, i: int) -> int:
        total = 0
        for row in self.rows[i]:
            m = 1
            for a in row:
                m *= len(a)
            total += m
        return total

    def world_count(self) -> int:
        total = 1
        for i in range(self.n):
            total *= self.tuple_instance_count(i)
        return total

    def tuple_mass(self, i: int) -> float:
        total = 0.0
        for row in self.rows[i]:
            m = 1.0
            for j, a in enumerate(row):
                probs = self.probs_of(i, j)
                m *= math.fsum(probs[c] for c in a)
            total += m
        return total

    def total_mass(self) -> float:
        total = 1.0
        for i in range(self.n):
            total *= self.tuple_mass(i)
        return total

    def tuple_instances(self, i: int, bound: int = INSTANCE_ENUM_BOUND
                        ) -> Iterator[tuple[int, tuple[int, ...], tuple, float]]:
        """Yield (row_idx, picks, values, prob) for every retained instance.

        Rows are instance-disjoint so each instance appears exactly once.
        Enumeration order: rows in order, then choice indices lexicographic.
        """
        if self.tuple_instance_count(i) > bound:
            raise ArityBoundError(f"tuple {i}: {self.tuple_instance_count(i)} instances exceed {bound}")
        for r, row in enumerate(self.rows[i]):
            value_lists = [self.values_of(i, j) for j in range(self.s)]
            prob_lists = [self.probs_of(i, j) for j in range(self.s)]
            for picks in itertools.product(*row):
                p = 1.0
                for j, c in enumerate(picks):
                    p *= prob_lists[j][c]
                yield r, picks, tuple(value_lists[j][c] for j, c in enumerate(picks)), p

    def uncertain_cells(self) -> list[tuple[int, int]]:
        out = []
        for i in range(self.n):
            multi_row = len(self.rows[i]) > 1
            for j in range(self.s):
                if multi_row or not self.cell_certain(i, j):
                    if len(self.retained_union(i, j)) > 1:
                        out.append((i, j))
        return out

    def live_tuples(self) -> list[int]:
        """Tuples with any uncertainty left (more than one retained instance)."""
        return [i for i in range(self.n) if self.tuple_instance_count(i) > 1]
