import itertools

import numpy as np
import pytest

from orsetdb import (ArityBoundError, Schema, WorldAssignment, check_attribute,
                     enumerate_worlds, parse_constraints, relation,
                     violating_combinations, world_satisfies)
from orsetdb.constraints import ConsistencyChecker
from orsetdb.oracle import build_world_table
from orsetdb.views import RelationView

from conftest import FOUR_YEAR_DEGREES, emp_constraints


def test_check_attribute_degreelevel(fig5):
    rel, cs = fig5
    ic = cs.attribute_level[0]
    assert check_attribute(cs, ic, "AAB") is False
    assert check_attribute(cs, ic, "MBA") is True


def test_check_attribute_true_predicate():
    rel = relation([("x", "string")], [["a"]])
    cs = parse_constraints("CHECK ATTR x : TRUE\n", rel.schema)
    ic = cs.attribute_level[0]
    for v in ("a", "b", ""):
        assert check_attribute(cs, ic, v) is True


def test_check_attribute_year_range():
    schema = Schema((("year", "int"),))
    cs = parse_constraints("CHECK ATTR year : year >= 1960\n", schema)
    ic = cs.attribute_level[0]
    assert check_attribute(cs, ic, 1959) is False
    assert check_attribute(cs, ic, 1960) is True
    assert check_attribute(cs, ic, None) is False  # null satisfies no comparison


def test_violating_combinations_sample_utuple(sample_utuple):
    rel, cs = sample_utuple
    ic = cs.tuple_level[0]
    combos = violating_combinations(cs, ic, rel.tuples[0])
    # slots are (division, degree); (training, BA) = indices (0, 0)
    assert combos == frozenset({(0, 0)})


def test_violating_combinations_always_true(sample_utuple):
    rel, _ = sample_utuple
    cs = emp_constraints("CHECK TUPLE (division, degree) : TRUE\n")
    assert violating_combinations(cs, cs.tuple_level[0], rel.tuples[0]) == frozenset()


def test_violating_combinations_three_ary():
    rel = relation([("a", "string"), ("b", "string"), ("c", "string")], [
        [[("x", 0.5), ("y", 0.5)], [("x", 0.5), ("y", 0.5)], [("x", 0.5), ("y", 0.5)]],
    ])
    cs = parse_constraints(
        "CHECK TUPLE (a, b, c) : NOT (a = 'x' AND b = 'y' AND c = 'x')\n", rel.schema)
    combos = violating_combinations(cs, cs.tuple_level[0], rel.tuples[0])
    assert combos == frozenset({(0, 1, 0)})


def test_violating_combinations_arity_bound():
    choices = [(f"v{i}", 1.0 / 60) for i in range(60)]
    rel = relation([("a", "string"), ("b", "string"), ("c", "string")],
                   [[choices, choices, choices]])
    cs = parse_constraints("CHECK TUPLE (a, b, c) : TRUE\n", rel.schema)
    with pytest.raises(ArityBoundError):
        violating_combinations(cs, cs.tuple_level[0], rel.tuples[0])


def test_world_satisfies_fig1(fig1):
    rel, cs = fig1
    bad = WorldAssignment(((0, 1, 0, 0), (0, 0, 0, 0), (0, 0, 0, 0)))  # manager/training
    good = WorldAssignment(((0, 0, 0, 0), (0, 0, 0, 0), (0, 0, 0, 0)))
    assert world_satisfies(cs, rel, bad) is False
    assert world_satisfies(cs, rel, good) is True


def test_world_satisfies_empty_constraints(fig1):
    rel, _ = fig1
    cs = emp_constraints("")
    for w, _ in enumerate_worlds(rel):
        assert world_satisfies(cs, rel, w)


def test_world_satisfies_agg_count(an_example):
    rel, cs = an_example
    agg_only = cs.restrict([cs.constraints[1]])
    # tuples 2 and 3 both instructor: group (jim, instructor) has count 2
    w = WorldAssignment(((0, 1, 0), (0, 0, 0), (0, 0, 0)))
    assert world_satisfies(agg_only, rel, w) is False
    w2 = WorldAssignment(((0, 1, 0), (0, 1, 0), (0, 0, 0)))
    assert world_satisfies(agg_only, rel, w2) is True


def test_monotone_under_constraint_removal(fig5):
    rel, cs = fig5
    for w, _ in enumerate_worlds(rel):
        full = world_satisfies(cs, rel, w)
        for k in range(len(cs)):
            reduced = cs.restrict([c for i, c in enumerate(cs.constraints) if i != k])
            if full:
                assert world_satisfies(reduced, rel, w)


def test_violating_combinations_partition_agrees_with_world_satisfies(sample_utuple):
    rel, cs = sample_utuple
    ic = cs.tuple_level[0]
    slots = cs.info(ic)["slots"]
    combos = violating_combinations(cs, ic, rel.tuples[0])
    for w, _ in enumerate_worlds(rel):
        projected = tuple(w.picks[0][j] for j in slots)
        assert world_satisfies(cs, rel, w) == (projected not in combos)


def test_null_semantics():
    rel = relation([("a", "string"), ("b", "string")], [
        [[(None, 0.5), ("x", 0.5)], "x"],
        [(("x", 1.0),), [("x", 0.6), (None, 0.4)]],
    ])
    cs = parse_constraints(
        "CHECK TUPLE (a, b) : a = b OR a IS NULL\nFD (a) -> (b)\n", rel.schema)
    # null = null comparisons are False, but IS NULL holds; FDs group null as a value
    w = WorldAssignment(((0, 0), (0, 0)))  # t1 = (null, x), t2 = (x, x)
    assert world_satisfies(cs, rel, w) is True
    w2 = WorldAssignment(((1, 0), (0, 1)))  # t1 = (x, x), t2 = (x, null): FD conflict on a = x
    assert world_satisfies(cs, rel, w2) is False


def _random_instance(rng):
    values = ["u", "v", "w"]
    n, s = int(rng.integers(2, 4)), 3
    rows = []
    for _ in range(n):
        row = []
        for j in range(s):
            k = int(rng.integers(1, 3))
            vals = rng.choice(values, size=k, replace=False)
            probs = rng.dirichlet(np.ones(k))
            row.append([(str(v), float(p)) for v, p in zip(vals, probs)])
        rows.append(row)
    rel = relation([("a", "string"), ("b", "string"), ("c", "string")], rows)
    text = ("FD (a) -> (b)\n"
            "CHECK TUPLE (b, c) : NOT (b = 'u' AND c = 'v')\n"
            "AGG GROUP BY (c) COUNT < 2\n"
            "CHECK ATTR a : a IN ('u', 'v', 'w')\n")
    cs = parse_constraints(text, rel.schema)
    return rel, cs


def test_three_evaluation_paths_agree():
    """world_satisfies (reference), ConsistencyChecker and the oracle's
    vectorized flags must classify every world identically."""
    rng = np.random.default_rng(12345)
    for _ in range(25):
        rel, cs = _random_instance(rng)
        view = RelationView.from_relation(rel)
        checker = ConsistencyChecker(view, cs)
        table = build_world_table(rel, cs)
        live = {i for (i, j) in view.uncertain_cells()}
        for idx, (w, p) in enumerate(enumerate_worlds(rel)):
            ref = world_satisfies(cs, rel, w)
            values = {i: list(vals) for i, vals in enumerate(w.values(rel))}
            assert checker.world_ok(values) == ref
            assert bool(table.flags[idx]) == ref
