import itertools

import numpy as np
import pytest

from orsetdb import (ExternalRelation, InfeasibleClassError, Member, NeedFixClass,
                     SubRelation, apply_relation_ic, class_is_violating, enumerate_worlds,
                     exact_tuple_instance_marginal, fix_agg_count, fix_agg_exp, fix_class,
                     fix_fd, fix_ind, fix_set, generate_need_fix_classes, parse_constraints,
                     relation, world_satisfies)
from orsetdb.relationfix import class_slots, simulate_apply_plan
from orsetdb.views import RelationView


def _classes(rel, cs, ic):
    return generate_need_fix_classes(RelationView.from_relation(rel), cs, ic)


def test_fd_class_an_example(an_example):
    rel, cs = an_example
    fd = cs.constraints[0]
    classes = {c.key: c for c in _classes(rel, cs, fd)}
    cls = classes[("jim", "instructor")]
    assert {(m.tuple_idx, m.projection) for m in cls.members} == {
        (0, ("jim", "instructor", "marketing")),
        (1, ("jim", "instructor", "training")),
        (2, ("jim", "instructor", "training")),
    }
    assert class_is_violating(cs, cls)
    # the other keys are singletons and trivially consistent
    for key, c in classes.items():
        if key != ("jim", "instructor"):
            assert not class_is_violating(cs, c)


def test_fd_all_distinct_keys_gives_singletons():
    rel = relation([("a", "string"), ("b", "string")], [
        ["k1", [("x", 0.5), ("y", 0.5)]],
        ["k2", "x"],
        ["k3", "y"],
    ])
    cs = parse_constraints("FD (a) -> (b)\n", rel.schema)
    classes = _classes(rel, cs, cs.constraints[0])
    assert all(len({m.tuple_idx for m in c.members}) == 1 for c in classes)
    assert all(not class_is_violating(cs, c) for c in classes)


def test_agg_class_after_fd_fix_matches_paper_sequence(an_example):
    """The documented aggregation class {2(1), 3(1)} appears once the FD fix
    has dropped instance 1(1)."""
    rel, cs = an_example
    fd, agg = cs.constraints
    sub, _ = apply_relation_ic(rel, cs, fd)
    classes = {c.key: c for c in generate_need_fix_classes(
        RelationView.from_subrelation(sub), cs, agg)}
    cls = classes[("jim", "instructor")]
    assert {(m.tuple_idx, m.projection) for m in cls.members} == {
        (1, ("jim", "instructor")), (2, ("jim", "instructor"))}
    assert class_is_violating(cs, cls)  # two members, bound 2


def test_fix_fd_training_group_wins(an_example):
    rel, cs = an_example
    fd = cs.constraints[0]
    fd_only = cs.restrict([fd])
    cls = {c.key: c for c in _classes(rel, fd_only, fd)}[("jim", "instructor")]
    marginals = {
        m: exact_tuple_instance_marginal(rel, fd_only, m.tuple_idx,
                                         projection=(cls.slots, m.projection))
        for m in cls.members}
    # frozen oracle values: 1(1) -> 0, 2(1) -> 0.15, 3(1) -> 0.5
    plan = fix_fd(cls, marginals, cs=fd_only)
    assert {(m.tuple_idx, m.projection[2]) for m in plan.drops} == {(0, "marketing")}
    assert all(m.projection[2] == "training" for m in plan.kept)


def test_fix_fd_agreeing_class_empty_plan(an_example):
    rel, cs = an_example
    fd = cs.constraints[0]
    cls = NeedFixClass(fd, ("jim", "manager"), class_slots(cs, fd),
                       (Member(1, ("jim", "manager", "training")),))
    assert fix_fd(cls, {}, cs=cs).empty


def test_fix_fd_tie_breaks_lexicographically():
    rel = relation([("a", "string"), ("b", "string")], [
        ["k", [("x", 0.5), ("y", 0.5)]],
        ["k", [("x", 0.5), ("y", 0.5)]],
    ])
    cs = parse_constraints("FD (a) -> (b)\n", rel.schema)
    cls = _classes(rel, cs, cs.constraints[0])[0]
    marginals = {m: 0.25 for m in cls.members}  # equal sums
    plan = fix_fd(cls, marginals, cs=cs)
    assert all(m.projection[1] == "x" for m in plan.kept)  # smaller value kept
    assert all(m.projection[1] == "y" for m in plan.drops)


def test_fix_fd_zero_marginals_falls_back_to_raw_mass():
    rel = relation([("a", "string"), ("b", "string")], [
        ["k", [("x", 0.9), ("y", 0.1)]],
        ["k", "y"],
    ])
    cs = parse_constraints("FD (a) -> (b)\n", rel.schema)
    cls = _classes(rel, cs, cs.constraints[0])[0]
    marginals = {m: 0.0 for m in cls.members}
    raw = {m: (1.9 if m.projection[1] == "y" else 0.9) for m in cls.members}
    plan = fix_fd(cls, marginals, raw_masses=raw, cs=cs)
    assert all(m.projection[1] == "y" for m in plan.kept)


def _ind_fixture():
    ext = {"dict": ExternalRelation("dict", ("w",), (("good",), ("fine",)))}
    rel = relation([("a", "string")], [
        [[("good", 0.5), ("bad1", 0.5)]],
        [[("bad2", 0.4), ("fine", 0.6)]],
        ["bad3"],
    ])
    cs = parse_constraints("IND (a) IN dict.(w)\n", rel.schema, externals=ext)
    return rel, cs


def test_fix_ind_drops_all_members():
    rel, cs = _ind_fixture()
    cls = _classes(rel, cs, cs.constraints[0])[0]
    assert {m.projection[0] for m in cls.members} == {"bad1", "bad2", "bad3"}
    plan = fix_ind(cls)
    assert set(plan.drops) == set(cls.members) and not plan.kept


def test_fix_ind_no_violations_no_classes():
    ext = {"dict": ExternalRelation("dict", ("w",), (("x",), ("y",)))}
    rel = relation([("a", "string")], [[[("x", 0.5), ("y", 0.5)]]])
    cs = parse_constraints("IND (a) IN dict.(w)\n", rel.schema, externals=ext)
    assert _classes(rel, cs, cs.constraints[0]) == []


def test_fix_set_mirrors_ind():
    ext = {"dict": ExternalRelation("dict", ("w",), (("good",),))}
    rel = relation([("a", "string"), ("flag", "string")], [
        [[("good", 0.5), ("odd", 0.5)], "yes"],
        [[("odd", 0.5), ("good", 0.5)], "no"],
    ])
    cs = parse_constraints(
        "SET (SELECT a WHERE flag = 'yes') SUBSETOF dict.(w)\n", rel.schema, externals=ext)
    classes = _classes(rel, cs, cs.constraints[0])
    assert len(classes) == 1
    cls = classes[0]
    # only tuple 0 passes the condition; its 'odd' value violates
    assert {(m.tuple_idx,) for m in cls.members} == {(0,)}
    plan = fix_set(cls)
    assert set(plan.drops) == set(cls.members)


def test_fix_set_condition_selects_nothing():
    ext = {"dict": ExternalRelation("dict", ("w",), (("good",),))}
    rel = relation([("a", "string"), ("flag", "string")], [
        [[("good", 0.5), ("odd", 0.5)], "no"],
    ])
    cs = parse_constraints(
        "SET (SELECT a WHERE flag = 'yes') SUBSETOF dict.(w)\n", rel.schema, externals=ext)
    assert _classes(rel, cs, cs.constraints[0]) == []


def _count_class(members_spec, bound):
    rel_rows = [[f"k"] for _ in members_spec]
    rel = relation([("g", "string")], [["k"] for _ in members_spec])
    cs = parse_constraints(f"AGG GROUP BY (g) COUNT < {bound}\n", rel.schema)
    cls = _classes(rel, cs, cs.constraints[0])[0]
    return cls, cs


def test_fix_agg_count_drops_min_marginals():
    cls, cs = _count_class(range(3), 2)
    marginals = {m: 0.1 * (m.tuple_idx + 1) for m in cls.members}
    plan = fix_agg_count(cls, marginals)
    assert len(plan.kept) == 1
    assert {m.tuple_idx for m in plan.drops} == {0, 1}


def test_fix_agg_count_small_class_empty_plan():
    cls, cs = _count_class(range(1), 2)
    assert fix_agg_count(cls, {}).empty


def test_fix_agg_count_five_members_bound_three():
    cls, cs = _count_class(range(5), 3)
    marginals = {m: [0.5, 0.1, 0.4, 0.2, 0.3][m.tuple_idx] for m in cls.members}
    plan = fix_agg_count(cls, marginals)
    assert len(plan.drops) == 3 and len(plan.kept) == 2
    # brute force: minimum marginal sum over all drop subsets leaving < 3
    best = min((sum(marginals[m] for m in combo), combo)
               for combo in itertools.combinations(cls.members, 3))
    assert sum(marginals[m] for m in plan.drops) == pytest.approx(best[0])


def _exp_class(b_values, theta, bound, func="SUM"):
    rel = relation([("g", "string"), ("b", "int")],
                   [["k", int(b)] for b in b_values])
    cs = parse_constraints(f"AGG GROUP BY (g) {func}(b) {theta} {bound}\n", rel.schema)
    classes = _classes(rel, cs, cs.constraints[0])
    return classes[0], cs


def test_fix_agg_exp_sum_bound():
    cls, cs = _exp_class([7, 6], "<=", 10)
    by_b = {m.projection[-1]: m for m in cls.members}
    marginals = {by_b[7]: 0.2, by_b[6]: 0.9}
    plan = fix_agg_exp(cls, marginals)
    assert [m.projection[-1] for m in plan.drops] == [7]


def test_fix_agg_exp_already_satisfied():
    cls, cs = _exp_class([4, 4], "<=", 10)
    assert fix_agg_exp(cls, {}).empty


def test_fix_agg_exp_avg_satisfied():
    cls, cs = _exp_class([4, 4], "<", 5, func="AVG")
    assert fix_agg_exp(cls, {}).empty


def test_fix_agg_exp_infeasible_count_equality():
    cls, cs = _exp_class([1, 2], "=", 3, func="COUNT")
    with pytest.raises(InfeasibleClassError):
        fix_agg_exp(cls, {m: 0.5 for m in cls.members})


def test_fix_agg_exp_exhaustive_matches_bruteforce():
    rng = np.random.default_rng(88)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        b_values = [int(rng.integers(1, 9)) for _ in range(n)]
        bound = int(rng.integers(3, 14))
        cls, cs = _exp_class(b_values, "<=", bound)
        marginals = {m: float(np.round(rng.uniform(0.05, 1.0), 3)) for m in cls.members}
        try:
            plan = fix_agg_exp(cls, marginals)
        except InfeasibleClassError:
            continue
        # oracle: minimum marginal-sum feasible drop set by full enumeration
        best = None
        for r in range(len(cls.members) + 1):
            for drops in itertools.combinations(cls.members, r):
                kept = [m for m in cls.members if m not in drops]
                if sum(m.projection[-1] for m in kept) <= bound:
                    cost = sum(marginals[m] for m in drops)
                    if best is None or cost < best - 1e-12:
                        best = cost
        assert sum(marginals[m] for m in plan.drops) == pytest.approx(best)


def test_apply_relation_ic_fig1(fig1):
    rel, cs = fig1
    sub, trace = apply_relation_ic(rel, cs, cs.constraints[0])
    # manager dropped from tuple 1 (paper's final approximation)
    assert sub.rows[0][0][1] == frozenset({0})
    assert sub.rows[1][0][1] == frozenset({0})
    for w, _ in enumerate_worlds(rel):
        if all(sub.row_of_picks(i, w.picks[i]) >= 0 for i in range(rel.n)):
            assert world_satisfies(cs, rel, w)


def test_apply_relation_ic_consistent_input_is_identity():
    rel = relation([("a", "string"), ("b", "string")], [
        ["k1", [("x", 0.5), ("y", 0.5)]],
        ["k2", "x"],
    ])
    cs = parse_constraints("FD (a) -> (b)\n", rel.schema)
    sub, trace = apply_relation_ic(rel, cs, cs.constraints[0])
    assert sub.rows == SubRelation.identity(rel).rows
    assert sub.gamma == pytest.approx(1.0)


def test_apply_both_ics_in_sequence_clears_all_violations(an_example):
    rel, cs = an_example
    fd, agg = cs.constraints
    sub1, _ = apply_relation_ic(rel, cs, fd)
    sub2, _ = apply_relation_ic(sub1, cs, agg)
    for w, _ in enumerate_worlds(rel):
        if all(sub2.row_of_picks(i, w.picks[i]) >= 0 for i in range(rel.n)):
            assert world_satisfies(cs, rel, w)


def test_plans_never_drop_outside_class(an_example):
    rel, cs = an_example
    fd = cs.constraints[0]
    for cls in _classes(rel, cs, fd):
        plan = fix_class(cls, cs, {m: 0.1 for m in cls.members},
                         {m: 0.1 for m in cls.members})
        assert set(plan.drops) <= set(cls.members)
        assert set(plan.kept) <= set(cls.members)


def _random_small_instance(rng):
    rows = []
    keys = ["k1", "k2"]
    vals = ["x", "y", "z"]
    n = int(rng.integers(2, 5))
    for _ in range(n):
        kk = int(rng.integers(1, 3))
        kchoices = rng.choice(keys, size=kk, replace=False)
        kprobs = rng.dirichlet(np.ones(kk))
        vk = int(rng.integers(1, 3))
        vchoices = rng.choice(vals, size=vk, replace=False)
        vprobs = rng.dirichlet(np.ones(vk))
        rows.append([
            [(str(v), float(p)) for v, p in zip(kchoices, kprobs)],
            [(str(v), float(p)) for v, p in zip(vchoices, vprobs)],
        ])
    rel = relation([("g", "string"), ("b", "string")], rows)
    ic_text = rng.choice(["FD (g) -> (b)\n", "AGG GROUP BY (g) COUNT < 3\n"])
    cs = parse_constraints(str(ic_text), rel.schema)
    return rel, cs


def test_fix_idempotence_on_random_instances():
    """Applying all plans then regenerating classes for the same IC yields
    only consistent classes."""
    rng = np.random.default_rng(321)
    for _ in range(40):
        rel, cs = _random_small_instance(rng)
        ic = cs.constraints[0]
        try:
            sub, _ = apply_relation_ic(rel, cs, ic)
        except Exception:
            continue
        view = RelationView.from_subrelation(sub)
        for cls in generate_need_fix_classes(view, cs, ic):
            assert not class_is_violating(cs, cls)
