"""Per-slot precision/recall evaluation against ground truth.

Each tuple's slot carries a recalibrated value distribution (retained mass
per value, normalized within the tuple). Precision of a slot averages the
probability assigned to the correct value over the tuples that return the
slot (retain any non-null value); recall divides the retrieved correct
mass by the number of tuples whose ground truth has a value for the slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import SchemaError
from .model import SubRelation, UncertainRelation
from .views import RelationView


@dataclass(frozen=True)
class SlotScore:
    name: str
    precision: float
    recall: float
    f1: float
    n_returned: int
    n_truth: int


@dataclass(frozen=True)
class EvalReport:
    slots: tuple[SlotScore, ...]
    precision: float  # macro averages
    recall: float
    f1: float


def _f1(pr: float, re: float) -> float:
    return 0.0 if pr + re == 0 else 2 * pr * re / (pr + re)


def value_distribution(view: RelationView, i: int, j: int) -> dict:
    """Per-tuple normalized mass of each retained value of one slot."""
    masses: dict = {}
    total = 0.0
    for row in view.rows[i]:
        row_mass = 1.0
        for k in range(view.s):
            if k != j:
                probs = view.probs_of(i, k)
                row_mass *= math.fsum(probs[c] for c in row[k])
        probs = view.probs_of(i, j)
        values = view.values_of(i, j)
        for c in row[j]:
            m = row_mass * probs[c]
            masses[values[c]] = masses.get(values[c], 0.0) + m
            total += m
    if total > 0:
        masses = {v: m / total for v, m in masses.items()}
    return masses


def evaluate(rel_or_sub, truth: Sequence[tuple]) -> EvalReport:
    view = RelationView.from_subrelation(rel_or_sub) if isinstance(rel_or_sub, SubRelation) \
        else RelationView.from_relation(rel_or_sub)
    if len(truth) != view.n:
        raise SchemaError(f"ground truth has {len(truth)} rows, relation has {view.n}")
    for row in truth:
        if len(row) != view.s:
            raise SchemaError("ground truth arity does not match the schema")
    slots = []
    for j, name in enumerate(view.schema.names):
        correct_mass = 0.0
        n_returned = 0
        n_truth = 0
        for i in range(view.n):
            dist = value_distribution(view, i, j)
            returned = any(v is not None for v in dist)
            if truth[i][j] is not None:
                n_truth += 1
            if returned:
                n_returned += 1
                if truth[i][j] is not None:
                    correct_mass += dist.get(truth[i][j], 0.0)
        pr = correct_mass / n_returned if n_returned else 0.0
        re = correct_mass / n_truth if n_truth else 0.0
        slots.append(SlotScore(name, pr, re, _f1(pr, re), n_returned, n_truth))
    pr = math.fsum(s.precision for s in slots) / len(slots)
    re = math.fsum(s.recall for s in slots) / len(slots)
    return EvalReport(tuple(slots), pr, re, _f1(pr, re))
