"""Exact possible-worlds oracle for small instances.

Deliberately brute force: every world is enumerated (vectorized with numpy
for throughput, but no inference shortcuts). This is the ground truth that
every sampled estimator is tested against.

Enumeration order is lexicographic in (tuple, attribute, choice): the first
cell is the most significant digit of the mixed-radix world index.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .constraints import (AggCount, AggExp, AttributeCheck, ConstraintSet, FD, IND,
                          SetConstraint, TupleCheck)
from .errors import FullyInconsistentError, OracleTooLargeError
from .model import (QualityReport, SubRelation, UncertainRelation, WorldAssignment,
                    world_probability)
from .views import RelationView

DEFAULT_WORLD_LIMIT = 2 ** 22


@dataclass(frozen=True)
class OracleReport:
    """Exact consistency accounting: pc + lam = 1, gamma = 1/pc (None if pc=0)."""

    pc: float
    lam: float
    gamma: float | None
    n_worlds: int
    consistent_worlds: tuple | None = None

    @property
    def fully_inconsistent(self) -> bool:
        return self.gamma is None


def enumerate_worlds(rel: UncertainRelation, limit: int = DEFAULT_WORLD_LIMIT
                     ) -> Iterator[tuple[WorldAssignment, float]]:
    """Stream every world exactly once with its probability."""
    total = rel.world_count()
    if total > limit:
        raise OracleTooLargeError(f"{total} worlds exceed limit {limit}; use sampling instead")
    cell_ranges = [range(len(rel.cell(i, j))) for i in range(rel.n) for j in range(rel.s)]
    s = rel.s
    for flat in itertools.product(*cell_ranges):
        picks = tuple(tuple(flat[i * s:(i + 1) * s]) for i in range(rel.n))
        w = WorldAssignment(picks)
        yield w, world_probability(rel, w)


class WorldTable:
    """Cached enumeration of a view's worlds with consistency flags.

    Built once, then reused for marginals and for quality evaluation of any
    number of sub-relations (cheap representability re-masks).
    """

    def __init__(self, view: RelationView, cs: ConstraintSet, limit: int = DEFAULT_WORLD_LIMIT):
        self.view = view
        self.cs = cs
        n_worlds = view.world_count()
        if n_worlds > limit:
            raise OracleTooLargeError(f"{n_worlds} worlds exceed limit {limit}; use sampling instead")
        self.n_worlds = n_worlds
        self.spaces = []
        for i in range(view.n):
            picks, values, probs = [], [], []
            for _, pk, vals, p in view.tuple_instances(i):
                picks.append(pk)
                values.append(vals)
                probs.append(p)
            self.spaces.append((picks, values, np.asarray(probs, dtype=np.float64)))
        counts = [len(sp[0]) for sp in self.spaces]
        strides = []
        acc = 1
        for c in reversed(counts):
            strides.append(acc)
            acc *= c
        strides.reverse()
        idx = np.arange(n_worlds, dtype=np.int64)
        self.ids = [((idx // strides[t]) % counts[t]).astype(np.int32) for t in range(view.n)]
        self.probs = np.ones(n_worlds, dtype=np.float64)
        for t in range(view.n):
            self.probs *= self.spaces[t][2][self.ids[t]]
        self.flags = self._consistency_flags()
        self.pc = float(self.probs[self.flags].sum())

    # -- consistency -------------------------------------------------------
    def _consistency_flags(self) -> np.ndarray:
        view, cs = self.view, self.cs
        flags = np.ones(self.n_worlds, dtype=bool)
        # per-tuple local masks: attribute/tuple checks, IND, SET
        for t in range(view.n):
            _, values, _ = self.spaces[t]
            mask = np.ones(len(values), dtype=bool)
            for c in cs.constraints:
                info = cs.info(c)
                body = c.body
                if isinstance(body, (AttributeCheck, TupleCheck)):
                    fn = info["fn"]
                    mask &= np.fromiter((fn(v) for v in values), bool, len(values))
                elif isinstance(body, IND):
                    slots, vset = info["slots"], info["value_set"]
                    mask &= np.fromiter(
                        (tuple(v[j] for j in slots) in vset for v in values), bool, len(values))
                elif isinstance(body, SetConstraint):
                    cond, aslot, vset = info["cond"], info["aslot"], info["value_set"]
                    mask &= np.fromiter(
                        ((not cond(v)) or (v[aslot],) in vset for v in values), bool, len(values))
            if not mask.all():
                flags &= mask[self.ids[t]]
        # cross-tuple families
        for c in cs.constraints:
            body = c.body
            if isinstance(body, FD):
                flags &= self._fd_flags(cs.info(c))
            elif isinstance(body, AggCount):
                flags &= self._agg_count_flags(cs.info(c), body.bound)
            elif isinstance(body, AggExp):
                flags &= self._agg_exp_flags(cs.info(c), body)
        return flags

    def _intern(self, slots) -> list[np.ndarray]:
        table: dict = {}
        out = []
        for t in range(self.view.n):
            _, values, _ = self.spaces[t]
            ids = np.empty(len(values), dtype=np.int32)
            for k, v in enumerate(values):
                key = tuple(v[j] for j in slots)
                ids[k] = table.setdefault(key, len(table))
            out.append(ids)
        return out

    def _fd_flags(self, info) -> np.ndarray:
        keys = self._intern(info["lhs"])
        bvals = self._intern(info["rhs"])
        ok = np.ones(self.n_worlds, dtype=bool)
        n = self.view.n
        for t in range(n):
            kt, bt = keys[t][self.ids[t]], bvals[t][self.ids[t]]
            for u in range(t + 1, n):
                ku, bu = keys[u][self.ids[u]], bvals[u][self.ids[u]]
                ok &= ~((kt == ku) & (bt != bu))
        return ok

    def _agg_count_flags(self, info, bound: int) -> np.ndarray:
        keys = self._intern(info["slots"])
        n = self.view.n
        if bound > n:
            return np.ones(self.n_worlds, dtype=bool)
        mat = np.stack([keys[t][self.ids[t]] for t in range(n)])
        mat = np.sort(mat, axis=0)
        eq = mat[1:] == mat[:-1]  # adjacent equal after sort
        bad = np.zeros(self.n_worlds, dtype=bool)
        win = bound - 1  # a group of size >= bound shows up as >= bound-1 adjacent equalities
        if win == 0:
            return np.zeros(self.n_worlds, dtype=bool)
        for start in range(0, n - win):
            bad |= eq[start:start + win].all(axis=0)
        return ~bad

    def _agg_exp_flags(self, info, body: AggExp) -> np.ndarray:
        keys = self._intern(info["gslots"])
        n = self.view.n
        bslot = info["bslot"]
        bvals, bnull = [], []
        for t in range(n):
            _, values, _ = self.spaces[t]
            raw = [v[bslot] for v in values]
            bnull.append(np.asarray([x is None for x in raw], dtype=bool))
            bvals.append(np.asarray([0.0 if x is None else float(x) for x in raw]))
        distinct = {int(k) for t in range(n) for k in np.unique(keys[t])}
        ok = np.ones(self.n_worlds, dtype=bool)
        for key in distinct:
            present = np.zeros(self.n_worlds, dtype=np.int64)
            cnt = np.zeros(self.n_worlds, dtype=np.int64)
            tot = np.zeros(self.n_worlds, dtype=np.float64)
            for t in range(n):
                has_key = keys[t][self.ids[t]] == key
                present += has_key
                sel = has_key & ~bnull[t][self.ids[t]]
                cnt += sel
                tot += np.where(sel, bvals[t][self.ids[t]], 0.0)
            if body.func == "COUNT":
                val = cnt.astype(np.float64)
            else:
                val = tot if body.func == "SUM" else np.where(cnt > 0, tot / np.maximum(cnt, 1), 0.0)
            if body.theta == "=":
                sat = np.isclose(val, body.value, rtol=1e-12, atol=1e-9)
            elif body.theta == "<=":
                sat = val <= body.value
            else:
                sat = val < body.value
            if body.func != "COUNT":
                sat = sat | (cnt == 0)  # SUM/AVG without non-null contributions: vacuous
            sat = sat | (present == 0)  # group absent from this world
            ok &= sat
        return ok

    # -- masks and masses ----------------------------------------------------
    def repr_vectors(self, rows: Sequence[Sequence[Sequence[frozenset[int] | Sequence[int]]]]
                     ) -> list[np.ndarray]:
        """Per tuple, a bool vector over local instances retained by ``rows``."""
        out = []
        for t in range(self.view.n):
            picks, _, _ = self.spaces[t]
            vec = np.zeros(len(picks), dtype=bool)
            for row in rows[t]:
                sets = [set(a) for a in row]
                for k, pk in enumerate(picks):
                    if not vec[k] and all(c in sets[j] for j, c in enumerate(pk)):
                        vec[k] = True
            out.append(vec)
        return out

    def repr_mask(self, rows) -> np.ndarray:
        mask = np.ones(self.n_worlds, dtype=bool)
        for t, vec in enumerate(self.repr_vectors(rows)):
            if not vec.all():
                mask &= vec[self.ids[t]]
        return mask

    def masses(self, rows=None) -> tuple[float, float]:
        """(consistent, inconsistent) mass of the worlds retained by ``rows``
        (all worlds when rows is None)."""
        if rows is None:
            cons = float(self.probs[self.flags].sum())
            return cons, float(self.probs.sum() - cons)
        mask = self.repr_mask(rows)
        cons = float(self.probs[mask & self.flags].sum())
        return cons, float(self.probs[mask].sum() - cons)

    def instance_masses(self, rows=None) -> list[np.ndarray]:
        """Per tuple, consistent mass per local instance (restricted to ``rows``)."""
        w = self.probs * self.flags
        if rows is not None:
            w = w * self.repr_mask(rows)
        out = []
        for t in range(self.view.n):
            out.append(np.bincount(self.ids[t], weights=w, minlength=len(self.spaces[t][0])))
        return out

    def quality(self, sub: SubRelation) -> QualityReport:
        if self.pc <= 0.0:
            raise FullyInconsistentError("pc = 0: quality undefined")
        cr, ir = self.masses(sub.rows)
        return QualityReport(pc=self.pc, cr=cr, ir=ir, quality=cr / self.pc - ir, method="exact")


def build_world_table(rel_or_view, cs: ConstraintSet, limit: int = DEFAULT_WORLD_LIMIT) -> WorldTable:
    view = rel_or_view if isinstance(rel_or_view, RelationView) else _as_view(rel_or_view)
    return WorldTable(view, cs, limit)


def _as_view(obj) -> RelationView:
    if isinstance(obj, RelationView):
        return obj
    if isinstance(obj, SubRelation):
        return RelationView.from_subrelation(obj)
    if isinstance(obj, UncertainRelation):
        return RelationView.from_relation(obj)
    raise TypeError(f"cannot view {type(obj).__name__}")


def exact_consistency_report(rel_or_view, cs: ConstraintSet,
                             limit: int = DEFAULT_WORLD_LIMIT,
                             include_worlds: bool = False) -> OracleReport:
    table = build_world_table(rel_or_view, cs, limit)
    total = float(table.probs.sum())
    pc = table.pc
    lam = total - pc
    worlds = None
    if include_worlds:
        view = table.view
        worlds = []
        for w_idx in np.nonzero(table.flags)[0]:
            picks = tuple(table.spaces[t][0][table.ids[t][w_idx]] for t in range(view.n))
            worlds.append(WorldAssignment(picks))
        worlds = tuple(worlds)
    return OracleReport(pc=pc, lam=lam, gamma=(1.0 / pc if pc > 0 else None),
                        n_worlds=table.n_worlds, consistent_worlds=worlds)


def exact_value_marginal(rel_or_view, cs: ConstraintSet, cell: tuple[int, int], choice: int,
                         limit: int = DEFAULT_WORLD_LIMIT) -> float:
    """Unnormalized consistent mass of worlds picking ``choice`` at ``cell``."""
    table = build_world_table(rel_or_view, cs, limit)
    i, j = cell
    picks, _, _ = table.spaces[i]
    contains = np.asarray([pk[j] == choice for pk in picks], dtype=bool)
    w = table.probs * table.flags
    return float(np.bincount(table.ids[i], weights=w, minlength=len(picks))[contains].sum())


def exact_all_value_marginals(rel_or_view, cs: ConstraintSet,
                              limit: int = DEFAULT_WORLD_LIMIT) -> dict[tuple[int, int, int], float]:
    """Consistent mass per (tuple, attribute, choice) in a single pass."""
    table = build_world_table(rel_or_view, cs, limit)
    per_instance = table.instance_masses()
    out: dict[tuple[int, int, int], float] = {}
    for i in range(table.view.n):
        picks, _, _ = table.spaces[i]
        for k, pk in enumerate(picks):
            for j, c in enumerate(pk):
                out[(i, j, c)] = out.get((i, j, c), 0.0) + float(per_instance[i][k])
    return out


def exact_tuple_instance_marginal(rel_or_view, cs: ConstraintSet, tuple_idx: int,
                                  instance: Sequence[int] | None = None,
                                  projection: tuple[Sequence[int], Sequence] | None = None,
                                  limit: int = DEFAULT_WORLD_LIMIT) -> float:
    """Consistent mass of worlds whose tuple picks match a full instance
    (choice indices) or a (slots, values) projection."""
    table = build_world_table(rel_or_view, cs, limit)
    picks, values, _ = table.spaces[tuple_idx]
    if instance is not None:
        target = tuple(instance)
        match = np.asarray([pk == target for pk in picks], dtype=bool)
    else:
        slots, vals = projection
        vals = tuple(vals)
        match = np.asarray([tuple(v[j] for j in slots) == vals for v in values], dtype=bool)
    w = table.probs * table.flags
    per = np.bincount(table.ids[tuple_idx], weights=w, minlength=len(picks))
    return float(per[match].sum())


def exact_quality(rel: UncertainRelation, cs: ConstraintSet, sub: SubRelation,
                  limit: int = DEFAULT_WORLD_LIMIT) -> QualityReport:
    """cr/ir of ``sub`` against the exact consistent world set of ``rel``."""
    return build_world_table(rel, cs, limit).quality(sub)
