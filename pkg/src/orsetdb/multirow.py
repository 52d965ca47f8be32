"""Multi-row tuple approximation.

Instead of deleting a conflicting value, a row can be split in two on a
violation set (two choices of one attribute whose consistent partner sets
in a witness attribute differ). Splits lose no consistent mass; they are
applied in decreasing order of the loss a deletion would have caused, until
the tuple is consistent or the row budget M is reached. Residual
inconsistent rows fall back to single-row resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .constraints import Constraint, ConstraintSet, violating_combinations
from .errors import TupleAnnihilatedError
from .model import Row, UncertainTuple, identity_row
from .tuplefix import Node, resolve_row_single


@dataclass(frozen=True)
class ViolationSet:
    """<attr_i: (a1, a2); attr_j> with differing consistent-partner sets.

    ``cons1`` is cons(a1, attr_j) already intersected with the row's
    retained set of attr_j; ``loss`` is the cheaper of the two single-row
    deletions (min marginal of a1, a2).
    """

    attr_i: int
    a1: int
    a2: int
    attr_j: int
    cons1: frozenset[int]
    loss: float


def _binary_conflicts(cs: ConstraintSet, t: UncertainTuple, ics: Sequence[Constraint],
                      row: Row) -> dict[tuple[int, int], set[tuple[int, int]]]:
    """Project hyperedges onto their binary skeletons per attribute pair."""
    out: dict[tuple[int, int], set[tuple[int, int]]] = {}
    for ic in ics:
        slots = cs.info(ic)["slots"]
        combos = violating_combinations(cs, ic, t, row)
        for combo in combos:
            nodes = list(zip(slots, combo))
            for x in range(len(nodes)):
                for y in range(x + 1, len(nodes)):
                    (ja, ca), (jb, cb) = nodes[x], nodes[y]
                    if ja > jb:
                        (ja, ca), (jb, cb) = (jb, cb), (ja, ca)
                    out.setdefault((ja, jb), set()).add((ca, cb))
    return out


def find_violation_sets(cs: ConstraintSet, t: UncertainTuple, row: Row,
                        ics: Sequence[Constraint],
                        marginals: Mapping[Node, float]) -> list[ViolationSet]:
    """Canonical violation sets of one row, sorted by loss descending.

    One set per unordered attribute pair: the lower-indexed attribute is
    preferred as the split side, and within it the first differing choice
    pair in index order.
    """
    conflicts = _binary_conflicts(cs, t, ics, row)
    found: list[ViolationSet] = []
    for (ja, jb), pairs in sorted(conflicts.items()):
        v = _directed_violation(ja, jb, pairs, row, marginals, flip=False)
        if v is None:
            v = _directed_violation(jb, ja, {(cb, ca) for ca, cb in pairs}, row, marginals, flip=True)
        if v is not None:
            found.append(v)
    found.sort(key=lambda v: (-v.loss, v.attr_i, v.a1, v.a2))
    return found


def _directed_violation(ji: int, jj: int, pairs: set[tuple[int, int]], row: Row,
                        marginals, flip: bool) -> ViolationSet | None:
    retained_i = sorted(row[ji])
    retained_j = row[jj]
    cons: dict[int, frozenset[int]] = {}
    for ci in retained_i:
        bad = {cj for (ca, cj) in pairs if ca == ci}
        cons[ci] = frozenset(c for c in retained_j if c not in bad)
    for x in range(len(retained_i)):
        for y in range(x + 1, len(retained_i)):
            a1, a2 = retained_i[x], retained_i[y]
            if cons[a1] != cons[a2]:
                loss = min(marginals.get((ji, a1), 0.0), marginals.get((ji, a2), 0.0))
                return ViolationSet(ji, a1, a2, jj, cons[a1], loss)
    return None


def split_row(row: Row, v: ViolationSet) -> list[Row]:
    """Split on a violation set: row1 pins a1 with its consistent partners,
    row2 keeps the rest of attr_i. Instance-disjoint by construction; a
    row1 with no consistent partners is discarded (it held no consistent
    instance)."""
    if v.a1 not in row[v.attr_i] or v.a2 not in row[v.attr_i]:
        raise ValueError("violation set does not apply to this row")
    rows: list[Row] = []
    cons1 = v.cons1 & row[v.attr_j]
    if cons1:
        row1 = list(row)
        row1[v.attr_i] = frozenset({v.a1})
        row1[v.attr_j] = frozenset(cons1)
        rows.append(tuple(row1))
    row2 = list(row)
    row2[v.attr_i] = frozenset(row[v.attr_i] - {v.a1})
    rows.append(tuple(row2))
    return rows


def row_is_consistent(cs: ConstraintSet, t: UncertainTuple, row: Row,
                      ics: Sequence[Constraint]) -> bool:
    return all(not violating_combinations(cs, ic, t, row) for ic in ics)


def resolve_tuple_multi_row(cs: ConstraintSet, t: UncertainTuple, m_budget: int,
                            marginals: Mapping[Node, float],
                            ics: Sequence[Constraint] | None = None,
                            rows: Sequence[Row] | None = None) -> list[Row]:
    """Split highest-loss violation sets until consistent or M rows exist,
    then single-row-resolve any residual inconsistent rows.

    With M = 1 the split loop never runs and the result equals single-row
    resolution. Raises TupleAnnihilatedError only if every row annihilates.
    """
    if m_budget < 1:
        raise ValueError("row budget must be >= 1")
    ics = list(ics) if ics is not None else list(cs.tuple_level)
    work: list[Row] = list(rows) if rows is not None else [identity_row(t)]
    while len(work) < m_budget:
        candidates: list[tuple[int, ViolationSet]] = []
        for r, row in enumerate(work):
            for v in find_violation_sets(cs, t, row, ics, marginals):
                candidates.append((r, v))
        if not candidates:
            break
        r, top = min(candidates, key=lambda rv: (-rv[1].loss, rv[0], rv[1].attr_i, rv[1].a1, rv[1].a2))
        work[r:r + 1] = split_row(work[r], top)
    resolved: list[Row] = []
    for row in work:
        if row_is_consistent(cs, t, row, ics):
            resolved.append(row)
            continue
        try:
            new_row, _ = resolve_row_single(cs, t, row, ics, _row_marginals(cs, t, row, marginals))
            resolved.append(new_row)
        except TupleAnnihilatedError:
            continue  # this row held no keepable instance; others may survive
    if not resolved:
        raise TupleAnnihilatedError(t.tuple_id, "all rows annihilated")
    return resolved


def _row_marginals(cs: ConstraintSet, t: UncertainTuple, row: Row, fallback) -> Mapping:
    """A row is a sub-tuple: its residual resolution weighs values by the
    consistent mass within the row, not the whole tuple (a value may carry
    mass only through instances that live in other rows)."""
    from .estimation import exact_tuple_marginals
    size = 1
    for a in row:
        size *= len(a)
    if size > 4096:
        return fallback
    return exact_tuple_marginals(t, cs, row).values
