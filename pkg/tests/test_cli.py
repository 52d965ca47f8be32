import csv
import json

import pytest

from orsetdb import fileio
from orsetdb.cli import main

from conftest import FOUR_YEAR_DEGREES


@pytest.fixture
def fig5_files(tmp_path, fig5):
    rel, cs = fig5
    rel_path = tmp_path / "emp.jsonl"
    fileio.save_relation(rel, rel_path)
    cs_path = tmp_path / "emp.dsl"
    cs_path.write_text(
        "CHECK ATTR deg : degreelevel(deg)\n"
        "CHECK TUPLE (division, deg) : division = 'training' IMPLIES deg IN ('MBA', 'PhD')\n"
        "FD (name, job_title) -> (division)\n", encoding="utf-8")
    pred_path = tmp_path / "degreelevel.csv"
    with open(pred_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "ok"])
        for v in sorted(FOUR_YEAR_DEGREES):
            w.writerow([v, "true"])
        w.writerow(["AAB", "false"])
    return rel_path, cs_path, pred_path


def _run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out.strip()
    lines = [json.loads(ln) for ln in out.splitlines() if ln]
    return code, lines


def test_validate_ok(capsys, fig5_files):
    rel, cs, pred = fig5_files
    code, lines = _run(capsys, ["validate", str(rel), str(cs),
                                "--predicate", f"degreelevel={pred}"])
    assert code == 0
    assert lines[-1] == {"status": "ok"}


def test_validate_normalization_diagnostic(capsys, tmp_path, fig5_files):
    _, cs, pred = fig5_files
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"schema": [{"name": "a", "kind": "string"}]}\n'
                   '{"a": [["x", 0.9]]}\n', encoding="utf-8")
    code, lines = _run(capsys, ["validate", str(bad), str(cs)])
    assert code == 1
    assert any("sum" in l.get("message", "") for l in lines)


def test_validate_unknown_column_diagnostic(capsys, tmp_path, fig5_files):
    rel, _, pred = fig5_files
    cs = tmp_path / "bad.dsl"
    cs.write_text("FD (name, nope) -> (division)\n", encoding="utf-8")
    code, lines = _run(capsys, ["validate", str(rel), str(cs)])
    assert code == 1
    assert any("unknown attribute" in l.get("message", "") for l in lines)


def test_resolve_reproduces_final_approximation(capsys, tmp_path, fig5_files, fig5):
    rel_path, cs_path, pred = fig5_files
    out = tmp_path / "out.jsonl"
    trace = tmp_path / "trace.csv"
    code, lines = _run(capsys, [
        "resolve", str(rel_path), str(cs_path), "--out", str(out), "--trace", str(trace),
        "--predicate", f"degreelevel={pred}", "--seed", "3"])
    assert code == 0
    summary = lines[-1]
    assert summary["termination"] in ("exhausted", "no_positive_utility")
    rel, _ = fig5
    sub = fileio.load_subrelation(rel, out)
    assert sub.rows == (
        ((frozenset({0}), frozenset({0}), frozenset({0}), frozenset({1})),),
        ((frozenset({0}), frozenset({0}), frozenset({0}), frozenset({0})),),
        ((frozenset({0, 1}), frozenset({0}), frozenset({0}), frozenset({1})),),
    )
    rows = list(csv.DictReader(open(trace)))
    assert len(rows) == summary["steps"]
    assert [r["target"] for r in rows] == ["ic1", "ic2@t0", "ic3@k('jim', 'manager')"]


def test_resolve_consistent_input_identity(capsys, tmp_path):
    from orsetdb import relation
    rel = relation([("a", "string"), ("b", "string")], [
        ["k1", [("x", 0.5), ("y", 0.5)]], ["k2", "x"]])
    rel_path = tmp_path / "r.jsonl"
    fileio.save_relation(rel, rel_path)
    cs_path = tmp_path / "c.dsl"
    cs_path.write_text("FD (a) -> (b)\n", encoding="utf-8")
    out = tmp_path / "out.jsonl"
    code, lines = _run(capsys, ["resolve", str(rel_path), str(cs_path), "--out", str(out)])
    assert code == 0
    assert lines[-1]["gamma"] == pytest.approx(1.0)
    sub = fileio.load_subrelation(rel, out)
    assert all(all(row[j] == frozenset(range(len(rel.cell(i, j))))
                   for j in range(rel.s)) for i, rows in enumerate(sub.rows) for row in rows)


def test_quality_exact_and_sampled(capsys, tmp_path, sample_utuple):
    rel, cs = sample_utuple
    rel_path = tmp_path / "r.jsonl"
    fileio.save_relation(rel, rel_path)
    cs_path = tmp_path / "c.dsl"
    cs_path.write_text(
        "CHECK TUPLE (division, degree) : division = 'training' IMPLIES degree = 'MBA'\n",
        encoding="utf-8")
    from orsetdb import SubRelation
    sub = SubRelation(rel, (((frozenset({0}), frozenset({0}), frozenset({1}),
                              frozenset({0, 1})),),), gamma=1 / 0.58)
    sub_path = tmp_path / "s.jsonl"
    fileio.save_subrelation(sub, sub_path)
    code, lines = _run(capsys, ["quality", str(rel_path), str(cs_path), str(sub_path),
                                "--exact"])
    assert code == 0
    assert lines[0]["quality"] == pytest.approx(0.40 / 0.58, abs=1e-9)
    code, lines = _run(capsys, ["quality", str(rel_path), str(cs_path), str(sub_path),
                                "--sampled", "--seed", "4"])
    assert code == 0
    assert lines[0]["quality"] == pytest.approx(0.40 / 0.58, abs=0.05)
    assert lines[0]["method"] == "sampled"


def test_query_true_predicate(capsys, tmp_path, sample_utuple):
    rel, _ = sample_utuple
    from orsetdb import SubRelation
    sub = SubRelation.identity(rel)
    sub_path = tmp_path / "s.jsonl"
    fileio.save_subrelation(sub, sub_path)
    code, lines = _run(capsys, ["query", str(sub_path), "--where", "TRUE"])
    assert code == 0
    assert lines[0] == {"tuple": 0, "mass": pytest.approx(1.0)}


def test_query_resolved_fig1_excludes_manager_training(capsys, tmp_path, fig1):
    rel, cs = fig1
    from orsetdb import greedy_resolve, ResolveConfig
    sub, _ = greedy_resolve(rel, cs, ResolveConfig(utility_mode="exact"))
    sub_path = tmp_path / "s.jsonl"
    fileio.save_subrelation(sub, sub_path)
    code, lines = _run(capsys, [
        "query", str(sub_path), "--where",
        "job_title = 'manager' AND division = 'training'"])
    assert code == 0
    assert lines == []  # no tuple retains any qualifying mass
    code, lines = _run(capsys, [
        "query", str(sub_path), "--where", "job_title = 'manager'"])
    assert lines and lines[0]["tuple"] == 1


def test_query_numeric_range_matches_oracle(capsys, tmp_path):
    from orsetdb import SubRelation, relation
    rel = relation([("year", "int")], [
        [[(1995, 0.25), (2005, 0.75)]],
        [[(1999, 0.5), (2001, 0.5)]],
    ])
    sub = SubRelation.identity(rel)
    sub_path = tmp_path / "s.jsonl"
    fileio.save_subrelation(sub, sub_path)
    code, lines = _run(capsys, ["query", str(sub_path), "--where", "year >= 2000"])
    assert {l["tuple"]: l["mass"] for l in lines} == {
        0: pytest.approx(0.75), 1: pytest.approx(0.5)}


def test_eval_command(capsys, tmp_path):
    from orsetdb import Schema, relation
    rel = relation([("a", "string")], [[[("right", 0.6), ("wrong", 0.4)]]])
    rel_path = tmp_path / "r.jsonl"
    fileio.save_relation(rel, rel_path)
    truth = tmp_path / "t.csv"
    fileio.save_ground_truth(rel.schema, [("right",)], truth)
    code, lines = _run(capsys, ["eval", str(rel_path), str(truth)])
    assert code == 0
    assert lines[0]["precision"] == pytest.approx(0.6)


def test_experiment_alpha_zero_flat(capsys, tmp_path):
    out_dir = tmp_path / "exp"
    code, lines = _run(capsys, [
        "experiment", "--out-dir", str(out_dir), "--tuples", "6", "--attrs", "4",
        "--ics", "3", "--alpha", "0.0", "--seed", "5"])
    assert code == 0
    summary = lines[-1]
    assert summary["greedy"]["steps"] == 0
    assert summary["all"]["steps"] == 0
    assert summary["greedy"]["pc"] == pytest.approx(1.0)
    assert (out_dir / "greedy.trace.csv").exists()
    assert (out_dir / "relation.jsonl").exists()


def test_experiment_greedy_at_least_matches_resolve_all(capsys, tmp_path):
    out_dir = tmp_path / "exp2"
    code, lines = _run(capsys, [
        "experiment", "--out-dir", str(out_dir), "--tuples", "6", "--attrs", "4",
        "--ics", "4", "--alpha", "0.4", "--seed", "12", "--utilities", "exact",
        "--rows", "1"])
    assert code in (0, 2)
    summary = lines[-1]
    assert summary["greedy"]["final_q"] >= summary["all"]["final_q"] - 1e-9


def test_generate_command(capsys, tmp_path):
    out_dir = tmp_path / "gen"
    code, lines = _run(capsys, [
        "generate", "--out-dir", str(out_dir), "--tuples", "10", "--attrs", "4",
        "--ics", "5", "--alpha", "0.3", "--seed", "3"])
    assert code == 0
    assert (out_dir / "relation.jsonl").exists()
    assert (out_dir / "constraints.dsl").exists()
    assert (out_dir / "truth.csv").exists()
    # the emitted instance loads and validates cleanly
    ext_args = []
    for p in sorted(out_dir.glob("ext_*.csv")):
        ext_args += ["--external", f"{p.stem}={p}"]
    code, lines = _run(capsys, ["validate", str(out_dir / "relation.jsonl"),
                                str(out_dir / "constraints.dsl")] + ext_args)
    assert code == 0
