"""Single-row resolution of tuple-level constraints via the violation graph.

Nodes are attribute value instances, hyperedges are violating combinations;
nodes incident to live edges are deleted greedily in order of lowest
consistency-restricted marginal until no edge survives. Nodes never touched
by an edge are always retained.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .constraints import Constraint, ConstraintSet, violating_combinations
from .errors import TupleAnnihilatedError
from .model import Row, UncertainTuple, identity_row

Node = tuple[int, int]  # (attribute slot, choice index)


@dataclass(frozen=True)
class ViolationGraph:
    nodes: tuple[Node, ...]
    hyperedges: tuple[frozenset[Node], ...]
    marginals: Mapping[Node, float] | None = None

    def incident_counts(self) -> dict[Node, int]:
        counts: dict[Node, int] = {}
        for e in self.hyperedges:
            for n in e:
                counts[n] = counts.get(n, 0) + 1
        return counts


def build_violation_graph(cs: ConstraintSet, t: UncertainTuple,
                          ics: Sequence[Constraint] | None = None,
                          retained: Row | None = None,
                          marginals: Mapping[Node, float] | None = None) -> ViolationGraph:
    """Graph over the tuple's (retained) attribute value instances."""
    if retained is None:
        retained = identity_row(t)
    ics = list(ics) if ics is not None else list(cs.tuple_level)
    nodes = tuple((j, c) for j in range(t.arity) for c in sorted(retained[j]))
    edges: set[frozenset[Node]] = set()
    for ic in ics:
        slots = cs.info(ic)["slots"]
        for combo in violating_combinations(cs, ic, t, retained):
            edges.add(frozenset(zip(slots, combo)))
    return ViolationGraph(nodes, tuple(sorted(edges, key=sorted)), marginals)


def resolve_row_single(cs: ConstraintSet, t: UncertainTuple, row: Row,
                       ics: Sequence[Constraint],
                       marginals: Mapping[Node, float]) -> tuple[Row, list[Node]]:
    """Greedy minimum-marginal node deletion until the row is edge-free.

    Tie-break on equal marginals: more incident edges first, then lower
    attribute index, then lower choice index. Returns the surviving row and
    the deleted nodes in order; raises TupleAnnihilatedError if an attribute
    would lose its last choice.
    """
    graph = build_violation_graph(cs, t, ics, row)
    live_edges = list(graph.hyperedges)
    dropped: list[Node] = []
    retained = [set(a) for a in row]
    while live_edges:
        counts: dict[Node, int] = {}
        for e in live_edges:
            for n in e:
                counts[n] = counts.get(n, 0) + 1
        victim = min(counts, key=lambda n: (marginals.get(n, 0.0), -counts[n], n[0], n[1]))
        j, c = victim
        retained[j].discard(c)
        if not retained[j]:
            raise TupleAnnihilatedError(t.tuple_id, f"attribute {j} emptied")
        dropped.append(victim)
        live_edges = [e for e in live_edges if victim not in e]
    return tuple(frozenset(a) for a in retained), dropped


def resolve_tuple_single_row(cs: ConstraintSet, t: UncertainTuple,
                             marginals: Mapping[Node, float],
                             ics: Sequence[Constraint] | None = None,
                             row: Row | None = None) -> tuple[Row, list[Node]]:
    ics = list(ics) if ics is not None else list(cs.tuple_level)
    return resolve_row_single(cs, t, row or identity_row(t), ics, marginals)
