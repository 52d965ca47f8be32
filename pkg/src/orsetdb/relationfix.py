"""NEED-FIX class generation and fixing for relation-level constraints.

A "tuple instance" here is the projection of a tuple's instances onto the
constraint's attributes. Classes group instances that can jointly violate
one constraint (same FD/aggregation key; IND/SET membership failures), and
are fixed by dropping member instances. Dropping is realized coarsely in
the or-set model: a choice is removed only when every projection containing
it was dropped, so fixing loops (and escalates to direct minimum-marginal
choice removal) until the constraint has no violating class left.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .constraints import (AggCount, AggExp, Constraint, ConstraintSet, FD, IND,
                          SetConstraint, agg_satisfied)
from .errors import InfeasibleClassError, SchemaError, TupleAnnihilatedError
from .model import Row, value_sort_key
from .views import RelationView


@dataclass(frozen=True, order=True)
class Member:
    """One projected tuple instance: (tuple index, values over the class slots)."""

    tuple_idx: int
    projection: tuple

    def sort_key(self):
        return (self.tuple_idx, tuple(value_sort_key(v) for v in self.projection))


@dataclass(frozen=True)
class NeedFixClass:
    ic: Constraint
    key: tuple
    slots: tuple[int, ...]
    members: tuple[Member, ...]

    def tuples(self) -> set[int]:
        return {m.tuple_idx for m in self.members}


@dataclass(frozen=True)
class FixPlan:
    ic_id: str
    key: tuple
    drops: tuple[Member, ...]
    kept: tuple[Member, ...]
    note: str = ""

    @property
    def empty(self) -> bool:
        return not self.drops


def class_slots(cs: ConstraintSet, ic: Constraint) -> tuple[int, ...]:
    info = cs.info(ic)
    body = ic.body
    if isinstance(body, FD):
        return info["lhs"] + info["rhs"]
    if isinstance(body, AggCount):
        return info["slots"]
    if isinstance(body, AggExp):
        return info["gslots"] + (info["bslot"],)
    if isinstance(body, (IND, SetConstraint)):
        return info["slots"]
    raise SchemaError(f"{ic.id} is not a relation-level constraint")


def tuple_projections(view: RelationView, i: int, slots: Sequence[int]) -> set[tuple]:
    """Distinct projections of tuple i's retained instances onto ``slots``."""
    out: set[tuple] = set()
    for row in view.rows[i]:
        opts = [row[j] for j in slots]
        if all(len(o) == 1 for o in opts):
            out.add(tuple(view.values_of(i, j)[o[0]] for j, o in zip(slots, opts)))
            continue
        value_lists = [[view.values_of(i, j)[c] for c in o] for j, o in zip(slots, opts)]
        out.update(itertools.product(*value_lists))
    return out


def _key_of(cs: ConstraintSet, ic: Constraint, projection: tuple) -> tuple:
    body = ic.body
    if isinstance(body, FD):
        return projection[:len(body.lhs)]
    if isinstance(body, AggCount):
        return projection
    if isinstance(body, AggExp):
        return projection[:-1]
    return ()


def _member_violates(cs: ConstraintSet, ic: Constraint, projection: tuple,
                     slots: Sequence[int]) -> bool:
    """For IND/SET: does this projection individually violate membership?"""
    info = cs.info(ic)
    body = ic.body
    if isinstance(body, IND):
        return projection not in info["value_set"]
    if isinstance(body, SetConstraint):
        vals = [None] * len(cs.schema)
        for j, v in zip(slots, projection):
            vals[j] = v
        return info["cond"](vals) and (vals[info["aslot"]],) not in info["value_set"]
    raise SchemaError(f"{ic.id} has no per-member violation test")


def generate_need_fix_classes(view: RelationView, cs: ConstraintSet, ic: Constraint,
                              tuples: Sequence[int] | None = None) -> list[NeedFixClass]:
    """All NEED-FIX classes of one relation-level constraint.

    FD/aggregation: one class per distinct grouping-key value (singletons
    included, trivially consistent). IND/SET: a single class of the
    instances violating the membership condition. ``tuples`` restricts the
    scan (incremental regeneration); default is the whole relation.
    """
    slots = class_slots(cs, ic)
    body = ic.body
    scan = range(view.n) if tuples is None else tuples
    if isinstance(body, (IND, SetConstraint)):
        members = []
        for i in scan:
            for proj in tuple_projections(view, i, slots):
                if _member_violates(cs, ic, proj, slots):
                    members.append(Member(i, proj))
        members.sort(key=Member.sort_key)
        return [NeedFixClass(ic, (), slots, tuple(members))] if members else []
    by_key: dict[tuple, list[Member]] = {}
    for i in scan:
        for proj in tuple_projections(view, i, slots):
            by_key.setdefault(_key_of(cs, ic, proj), []).append(Member(i, proj))
    out = []
    for key in sorted(by_key, key=lambda k: tuple(value_sort_key(v) for v in k)):
        members = sorted(by_key[key], key=Member.sort_key)
        out.append(NeedFixClass(ic, key, slots, tuple(members)))
    return out


def class_is_violating(cs: ConstraintSet, cls: NeedFixClass) -> bool:
    body = cls.ic.body
    if isinstance(body, (IND, SetConstraint)):
        return bool(cls.members)
    if isinstance(body, FD):
        nb = len(body.lhs)
        groups = {m.projection[nb:] for m in cls.members}
        return len(groups) >= 2 and len(cls.tuples()) >= 2
    if isinstance(body, AggCount):
        return len(cls.members) >= body.bound
    if isinstance(body, AggExp):
        cnt, tot = _agg_of_members(cls.members)
        return not agg_satisfied(body.func, body.theta, body.value, cnt, tot)
    raise SchemaError(f"{cls.ic.id} is not relation-level")


def _agg_of_members(members: Sequence[Member]) -> tuple[int, float]:
    cnt, tot = 0, 0.0
    for m in members:
        b = m.projection[-1]
        if b is not None:
            cnt, tot = cnt + 1, tot + float(b)
    return cnt, tot


# ---------------------------------------------------------------------------
# Fixing (Table II procedures)

def fix_fd(cls: NeedFixClass, marginals: Mapping[Member, float],
           raw_masses: Mapping[Member, float] | None = None,
           cs: ConstraintSet | None = None) -> FixPlan:
    """Group members by the dependent value, keep the group with the highest
    marginal sum, drop the rest. Ties keep the lexicographically smallest
    dependent value; an all-zero-marginal class falls back to raw mass."""
    body = cls.ic.body
    if not isinstance(body, FD):
        raise SchemaError(f"{cls.ic.id} is not an FD")
    if cs is not None and not class_is_violating(cs, cls):
        return FixPlan(cls.ic.id, cls.key, (), cls.members, note="consistent")
    nb = len(body.lhs)
    groups: dict[tuple, list[Member]] = {}
    for m in cls.members:
        groups.setdefault(m.projection[nb:], []).append(m)
    if len(groups) <= 1:
        return FixPlan(cls.ic.id, cls.key, (), cls.members, note="consistent")
    sums = {bv: math.fsum(marginals.get(m, 0.0) for m in ms) for bv, ms in groups.items()}
    if max(sums.values()) <= 0.0 and raw_masses is not None:
        sums = {bv: math.fsum(raw_masses.get(m, 0.0) for m in ms) for bv, ms in groups.items()}
    winner = min(sums, key=lambda bv: (-sums[bv], tuple(value_sort_key(v) for v in bv)))
    drops = tuple(m for bv, ms in sorted(groups.items(),
                                         key=lambda kv: tuple(value_sort_key(v) for v in kv[0]))
                  for m in ms if bv != winner)
    return FixPlan(cls.ic.id, cls.key, drops, tuple(groups[winner]))


def fix_ind(cls: NeedFixClass) -> FixPlan:
    """Drop every member (each individually violates the inclusion)."""
    return FixPlan(cls.ic.id, cls.key, cls.members, ())


def fix_set(cls: NeedFixClass) -> FixPlan:
    """Same fixing rule as IND per the fixing table."""
    return FixPlan(cls.ic.id, cls.key, cls.members, ())


def fix_agg_count(cls: NeedFixClass, marginals: Mapping[Member, float]) -> FixPlan:
    """Drop the minimum-marginal instances until fewer than the bound remain."""
    body = cls.ic.body
    if not isinstance(body, AggCount):
        raise SchemaError(f"{cls.ic.id} is not a COUNT aggregation")
    if len(cls.members) < body.bound:
        return FixPlan(cls.ic.id, cls.key, (), cls.members, note="consistent")
    need = len(cls.members) - (body.bound - 1)
    order = sorted(cls.members, key=lambda m: (marginals.get(m, 0.0),) + m.sort_key())
    drops = tuple(order[:need])
    kept = tuple(m for m in cls.members if m not in set(drops))
    return FixPlan(cls.ic.id, cls.key, drops, kept)


def _agg_feasible(body: AggExp, kept: Sequence[Member]) -> bool:
    if not kept:
        # dropping everything eliminates the group; only upper bounds allow it
        return body.theta in ("<", "<=")
    cnt, tot = _agg_of_members(kept)
    return agg_satisfied(body.func, body.theta, body.value, cnt, tot)


def _agg_gap(body: AggExp, kept: Sequence[Member]) -> float:
    if not kept:
        return 0.0 if body.theta in ("<", "<=") else float("inf")
    cnt, tot = _agg_of_members(kept)
    if body.func == "COUNT":
        v = float(cnt)
    elif cnt == 0:
        return 0.0
    elif body.func == "SUM":
        v = tot
    else:
        v = tot / cnt
    if body.theta == "=":
        return abs(v - body.value)
    return max(0.0, v - body.value)


def fix_agg_exp(cls: NeedFixClass, marginals: Mapping[Member, float],
                exhaustive_bound: int = 20, restarts: int = 8, seed: int = 0) -> FixPlan:
    """Search the drop set with minimum marginal sum that satisfies the
    expression bound: exhaustive up to ``exhaustive_bound`` members, greedy
    hill climbing (gap first, then marginal cost, with randomized-restart
    tie shuffling) beyond. Raises InfeasibleClassError when no drop set
    works (e.g. COUNT = k with fewer than k members)."""
    body = cls.ic.body
    if not isinstance(body, AggExp):
        raise SchemaError(f"{cls.ic.id} is not an expression aggregation")
    members = list(cls.members)
    if _agg_feasible(body, members):
        return FixPlan(cls.ic.id, cls.key, (), cls.members, note="consistent")
    if len(members) <= exhaustive_bound:
        best = None
        for mask in range(1, 1 << len(members)):
            drops = [m for k, m in enumerate(members) if mask >> k & 1]
            kept = [m for k, m in enumerate(members) if not (mask >> k & 1)]
            if not _agg_feasible(body, kept):
                continue
            cost = math.fsum(marginals.get(m, 0.0) for m in drops)
            cand = (cost, len(drops), tuple(m.sort_key() for m in drops), tuple(drops), tuple(kept))
            if best is None or cand[:3] < best[:3]:
                best = cand
        if best is None:
            raise InfeasibleClassError(f"{cls.ic.id} key {cls.key}: no feasible drop set")
        return FixPlan(cls.ic.id, cls.key, best[3], best[4])
    best_drops = None
    best_cost = float("inf")
    for attempt in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(105, attempt)))
        kept = list(members)
        drops: list[Member] = []
        while kept and not _agg_feasible(body, kept):
            scored = []
            for idx, m in enumerate(kept):
                rest = kept[:idx] + kept[idx + 1:]
                scored.append((_agg_gap(body, rest), marginals.get(m, 0.0),
                               rng.random() if attempt else 0.0, idx))
            scored.sort()
            idx = scored[0][3]
            drops.append(kept.pop(idx))
        if _agg_feasible(body, kept):
            cost = math.fsum(marginals.get(m, 0.0) for m in drops)
            if cost < best_cost:
                best_cost, best_drops = cost, (tuple(drops), tuple(kept))
    if best_drops is None:
        raise InfeasibleClassError(f"{cls.ic.id} key {cls.key}: hill climbing found no feasible drop set")
    return FixPlan(cls.ic.id, cls.key, best_drops[0], best_drops[1])


def fix_class(cls: NeedFixClass, cs: ConstraintSet, marginals: Mapping[Member, float],
              raw_masses: Mapping[Member, float] | None = None,
              exhaustive_bound: int = 20, restarts: int = 8, seed: int = 0) -> FixPlan:
    body = cls.ic.body
    if isinstance(body, FD):
        return fix_fd(cls, marginals, raw_masses, cs=cs)
    if isinstance(body, IND):
        return fix_ind(cls)
    if isinstance(body, SetConstraint):
        return fix_set(cls)
    if isinstance(body, AggCount):
        return fix_agg_count(cls, marginals)
    if isinstance(body, AggExp):
        return fix_agg_exp(cls, marginals, exhaustive_bound, restarts, seed)
    raise SchemaError(f"{cls.ic.id} is not relation-level")


# ---------------------------------------------------------------------------
# Plan application (coarse or-set realization)

@dataclass
class ApplyResult:
    rows: dict[int, tuple[Row, ...]]  # replacement rows per affected tuple
    removed: list[tuple[int, int, int]]  # (tuple, attribute, choice) actually removed
    annihilated: int | None = None


def simulate_apply_plan(view: RelationView, slots: Sequence[int], plan: FixPlan) -> ApplyResult:
    """Realize instance drops as retained-set restrictions.

    Per affected tuple and row, a choice survives in a slot attribute iff
    some kept projection of that row contains it; rows with no kept
    projection are discarded. The result may keep a dropped projection
    representable (the or-set coarsening); callers re-check and escalate.
    """
    dropped_by_tuple: dict[int, set[tuple]] = {}
    for m in plan.drops:
        dropped_by_tuple.setdefault(m.tuple_idx, set()).add(m.projection)
    out = ApplyResult({}, [])
    for i, dropped in sorted(dropped_by_tuple.items()):
        new_rows: list[Row] = []
        for row in view.rows[i]:
            value_lists = [[view.values_of(i, j)[c] for c in row[j]] for j in slots]
            marked: list[set[int]] = [set() for _ in slots]
            any_kept = False
            for combo in itertools.product(*[range(len(v)) for v in value_lists]):
                proj = tuple(value_lists[k][c] for k, c in enumerate(combo))
                if proj in dropped:
                    continue
                any_kept = True
                for k, c in enumerate(combo):
                    marked[k].add(row[slots[k]][c])
            if not any_kept:
                continue
            new_row = list(frozenset(a) for a in row)
            for k, j in enumerate(slots):
                new_row[j] = frozenset(marked[k])
            new_rows.append(tuple(new_row))
        if not new_rows:
            out.annihilated = i
            return out
        out.rows[i] = tuple(new_rows)
        for k, j in enumerate(slots):
            before = set(view.retained_union(i, j))
            after = {c for r in new_rows for c in r[j]}
            for c in sorted(before - after):
                out.removed.append((i, j, c))
    return out


def regenerate_class(view: RelationView, cs: ConstraintSet, ic: Constraint,
                     key: tuple, tuples: Sequence[int]) -> NeedFixClass:
    """Rebuild one class over the given tuples (drops only ever shrink it)."""
    slots = class_slots(cs, ic)
    members = []
    for i in tuples:
        for proj in tuple_projections(view, i, slots):
            if isinstance(ic.body, (IND, SetConstraint)):
                if _member_violates(cs, ic, proj, slots):
                    members.append(Member(i, proj))
            elif _key_of(cs, ic, proj) == key:
                members.append(Member(i, proj))
    members.sort(key=Member.sort_key)
    return NeedFixClass(ic, key, slots, tuple(members))
