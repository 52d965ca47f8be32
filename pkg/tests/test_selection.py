import numpy as np
import pytest

from orsetdb import (ClassTarget, ResolveConfig, SamplerConfig, SubRelation, TupleTarget,
                     compute_utility, exact_consistency_report, exact_quality,
                     greedy_resolve, incremental_add_ics, incremental_add_tuples,
                     parse_constraints, relation, resolve_all, world_satisfies)
from orsetdb.model import UncertainTuple, attribute_world
from orsetdb.oracle import enumerate_worlds

from conftest import emp_constraints


def _cfg(**kw):
    kw.setdefault("utility_mode", "exact")
    kw.setdefault("sampler", SamplerConfig(master_seed=1))
    return ResolveConfig(**kw)


def test_utility_sample_utuple(sample_utuple):
    rel, cs = sample_utuple
    rec = compute_utility(rel, cs, TupleTarget(cs.tuple_level[0].id, 0), _cfg(rows=1))
    # plan drops training: IC_L = 0.42, CM_L = 0.18, Pc = 0.58
    assert rec.ic_loss == pytest.approx(0.42, abs=1e-9)
    assert rec.cm_loss == pytest.approx(0.18, abs=1e-9)
    assert rec.utility == pytest.approx(0.42 - 0.18 / 0.58, abs=1e-9)
    assert rec.utility > 0


def test_utility_already_consistent_target(fig5):
    rel, cs = fig5
    ic = cs.tuple_level[0]
    rec = compute_utility(rel, cs, TupleTarget(ic.id, 1), _cfg())
    assert rec.ic_loss == pytest.approx(0.0, abs=1e-9)
    assert rec.cm_loss == pytest.approx(0.0, abs=1e-9)
    assert rec.utility == pytest.approx(0.0, abs=1e-9)


def test_utility_forced_ba_plan_is_negative(sample_utuple):
    rel, cs = sample_utuple
    # hypothetical plan dropping BA instead: UT = 0.42 - 0.28/0.58 < 0
    rec = compute_utility(rel, cs,
                          TupleTarget(cs.tuple_level[0].id, 0, forced_drops=(((3, 0)),)),
                          _cfg())
    assert rec.cm_loss == pytest.approx(0.28, abs=1e-9)
    assert rec.utility == pytest.approx(0.42 - 0.28 / 0.58, abs=1e-9)
    assert rec.utility < 0


def test_greedy_fig5_reproduces_drop_sequence(fig5):
    rel, cs = fig5
    sub, trace = greedy_resolve(rel, cs, _cfg())
    executed = [s for s in trace.steps if not s.skipped and s.dropped]
    # 1) attribute check drops AAB, 2) tuple check drops BA, 3) FD drops manager
    assert [s.target_id for s in executed] == ["ic1", "ic2@t0",
                                               "ic3@k('jim', 'manager')"]
    assert [v for (_, _, v) in executed[0].dropped] == ["AAB"]
    assert [v for (_, _, v) in executed[1].dropped] == ["BA"]
    assert [v for (_, _, v) in executed[2].dropped] == ["manager"]
    # final structure equals the paper's final approximation
    expected = (
        ((frozenset({0}), frozenset({0}), frozenset({0}), frozenset({1})),),
        ((frozenset({0}), frozenset({0}), frozenset({0}), frozenset({0})),),
        ((frozenset({0, 1}), frozenset({0}), frozenset({0}), frozenset({1})),),
    )
    assert sub.rows == expected
    assert sub.gamma == pytest.approx(1.0 / trace.pc)


def test_greedy_empty_constraints_is_identity(fig1):
    rel, _ = fig1
    cs = emp_constraints("")
    sub, trace = greedy_resolve(rel, cs, _cfg())
    assert sub.rows == SubRelation.identity(rel).rows
    assert trace.steps == []
    assert sub.gamma == pytest.approx(1.0)


def _adversarial_instance():
    """One cheap violation whose removal costs a lot of consistent mass."""
    rel = relation([("a", "string"), ("b", "string")], [
        [[("a1", 0.9), ("a2", 0.1)], [("b1", 0.9), ("b2", 0.1)]],
    ])
    cs = parse_constraints(
        "CHECK TUPLE (a, b) : NOT (a = 'a2' AND b = 'b2')\n", rel.schema)
    return rel, cs


def test_greedy_beats_resolve_all_on_adversarial_instance():
    # single-row model: the only fixes delete mass, and the cheap violation
    # is not worth the consistent mass its fix would remove
    rel, cs = _adversarial_instance()
    sub_g, trace_g = greedy_resolve(rel, cs, _cfg(rows=1))
    sub_a, trace_a = resolve_all(rel, cs, _cfg(rows=1))
    q_g = exact_quality(rel, cs, sub_g).quality
    q_a = exact_quality(rel, cs, sub_a).quality
    # greedy keeps the identity (utility 0.01 - 0.09/0.99 < 0), resolve-all drops mass
    assert trace_g.termination == "no_positive_utility"
    assert q_g == pytest.approx(1 - 0.01, abs=1e-9)
    assert q_a < q_g
    assert len([s for s in trace_a.steps if not s.skipped]) == 1


def test_multirow_split_dissolves_adversarial_instance():
    # with a row budget the same violation splits losslessly and greedy
    # reaches exact capture
    rel, cs = _adversarial_instance()
    sub, trace = greedy_resolve(rel, cs, _cfg(rows=2))
    q = exact_quality(rel, cs, sub)
    assert q.quality == pytest.approx(1.0, abs=1e-9)
    assert q.ir == pytest.approx(0.0, abs=1e-12)


def test_resolve_all_equals_greedy_when_all_utilities_positive(fig5):
    rel, cs = fig5
    sub_g, _ = greedy_resolve(rel, cs, _cfg())
    sub_a, _ = resolve_all(rel, cs, _cfg())
    assert sub_g.rows == sub_a.rows


def test_trace_masses_monotone(fig5):
    rel, cs = fig5
    _, trace = greedy_resolve(rel, cs, _cfg())
    crs = [s.cr for s in trace.steps]
    irs = [s.ir for s in trace.steps]
    assert all(a >= b - 1e-12 for a, b in zip(crs, crs[1:]))
    assert all(a >= b - 1e-12 for a, b in zip(irs, irs[1:]))


def test_greedy_never_executes_nonpositive_utility(fig5):
    rel, cs = fig5
    _, trace = greedy_resolve(rel, cs, _cfg())
    for s in trace.steps:
        if not s.skipped and "@" in s.target_id:  # gated phases only
            assert s.utility > 0


def test_determinism(fig5):
    rel, cs = fig5
    r1 = greedy_resolve(rel, cs, _cfg())
    r2 = greedy_resolve(rel, cs, _cfg())
    assert r1[0].rows == r2[0].rows
    assert [s.target_id for s in r1[1].steps] == [s.target_id for s in r2[1].steps]


def test_threshold_stops_early(fig5):
    rel, cs = fig5
    sub, trace = greedy_resolve(rel, cs, _cfg(threshold=2.0))
    assert trace.termination == "threshold"


def test_sampled_mode_on_fig5(fig5):
    """Sampled mode factors the local constraints exactly like exact mode.

    The relation-level step may be gated: the paper's CM_L estimator (raw
    Karp-Luby union over dropped values) cannot see that the manager
    instances carry no consistent mass globally, so it overestimates the
    loss. Exact mode is the authority on the final structure."""
    rel, cs = fig5
    sub_e, _ = greedy_resolve(rel, cs, _cfg())
    sub_s, trace_s = greedy_resolve(rel, cs, _cfg(utility_mode="sampled"))
    assert trace_s.utility_mode == "sampled"
    executed = [s.target_id for s in trace_s.steps if not s.skipped and s.dropped]
    assert executed[:2] == ["ic1", "ic2@t0"]
    # columns untouched by the relation step agree with exact mode
    for i in range(rel.n):
        for j in (0, 2, 3):
            assert sub_s.rows[i][0][j] == sub_e.rows[i][0][j]
    # in resolve-all mode the FD fix applies regardless and matches exact
    sub_all, _ = resolve_all(rel, cs, _cfg(utility_mode="sampled"))
    assert sub_all.rows == sub_e.rows


# -- incrementality ---------------------------------------------------------

def test_incremental_add_zero_ics(fig5):
    rel, cs = fig5
    sub, _ = greedy_resolve(rel, cs, _cfg())
    cs_empty = parse_constraints("", rel.schema)
    sub2, trace2 = incremental_add_ics(sub, cs, cs_empty, _cfg())
    assert sub2.rows == sub.rows
    assert [s for s in trace2.steps if not s.skipped and s.dropped] == []


def test_incremental_add_attribute_ic(fig1):
    rel, cs = fig1
    sub, _ = greedy_resolve(rel, cs, _cfg())
    new_cs = parse_constraints("CHECK ATTR name : name != 'jill'\n", rel.schema)
    sub2, _ = incremental_add_ics(sub, cs, new_cs, _cfg())
    # only the jill choice of tuple 3 is dropped; everything else untouched
    assert sub2.rows[0] == sub.rows[0]
    assert sub2.rows[1] == sub.rows[1]
    assert sub2.rows[2][0][0] == frozenset({0})


def test_incremental_add_fd_matches_full_recompute(fig5):
    rel, cs = fig5
    local = cs.restrict(cs.attribute_level + cs.tuple_level)
    sub1, _ = greedy_resolve(rel, local, _cfg())
    fd_cs = parse_constraints("FD (name, job_title) -> (division)\n", rel.schema)
    inc, _ = incremental_add_ics(sub1, local, fd_cs, _cfg())
    full, _ = greedy_resolve(rel, cs, _cfg())
    assert inc.rows == full.rows


def test_incremental_add_zero_tuples(fig5):
    rel, cs = fig5
    sub, _ = greedy_resolve(rel, cs, _cfg())
    sub2, _ = incremental_add_tuples(sub, [], cs, _cfg())
    assert sub2.rows == sub.rows


def test_incremental_add_clean_tuple_appended_verbatim(fig1):
    rel, cs = fig1
    sub, _ = greedy_resolve(rel, cs, _cfg())
    newcomer = UncertainTuple((
        attribute_world([("ann", 1.0)]), attribute_world([("analyst", 1.0)]),
        attribute_world([("research", 1.0)]), attribute_world([("PhD", 1.0)])), 99)
    sub2, trace2 = incremental_add_tuples(sub, [newcomer], cs, _cfg())
    assert sub2.base.n == rel.n + 1
    assert sub2.rows[:rel.n] == sub.rows
    assert sub2.rows[rel.n] == ((frozenset({0}),) * 4,)


def test_incremental_new_tuple_creates_fd_class(fig1):
    rel, cs = fig1
    sub, _ = greedy_resolve(rel, cs, _cfg())
    # a certain tuple conflicting with tuple 2's (jim, manager, marketing)
    newcomer = UncertainTuple((
        attribute_world([("jim", 1.0)]), attribute_world([("manager", 1.0)]),
        attribute_world([("training", 0.4), ("marketing", 0.6)]),
        attribute_world([("MBA", 1.0)])), 99)
    sub2, trace2 = incremental_add_tuples(sub, [newcomer], cs, _cfg())
    base2 = sub2.base
    for w, _ in enumerate_worlds(base2):
        if all(sub2.row_of_picks(i, w.picks[i]) >= 0 for i in range(base2.n)):
            cs2 = parse_constraints("FD (name, job_title) -> (division)\n", base2.schema)
            assert world_satisfies(cs2, base2, w)


def test_incremental_matches_full_when_no_interaction():
    """Old violations confined to the first half, new tuples only conflict
    among themselves: incremental result equals full recomputation."""
    rng = np.random.default_rng(777)
    schema = [("k", "string"), ("v", "string")]
    for trial in range(10):
        old_rows = [
            ["ka", [("x", 0.6), ("y", 0.4)]],
            ["ka", [("y", 0.7), ("x", 0.3)]],
            ["kb", "x"],
        ]
        new_rows = [
            ["kc", [("x", 0.5), ("y", 0.5)]],
            ["kc", [("y", 0.8), ("x", 0.2)]],
        ]
        rel_old = relation(schema, old_rows)
        rel_full = relation(schema, old_rows + new_rows)
        cs_old = parse_constraints("FD (k) -> (v)\n", rel_old.schema)
        cs_full = parse_constraints("FD (k) -> (v)\n", rel_full.schema)
        sub_old, _ = greedy_resolve(rel_old, cs_old, _cfg())
        new_tuples = rel_full.tuples[rel_old.n:]
        inc, _ = incremental_add_tuples(sub_old, new_tuples, cs_old, _cfg())
        full, _ = greedy_resolve(rel_full, cs_full, _cfg())
        assert inc.rows == full.rows
