import datetime

import pytest

from orsetdb import (ExternalRelation, Schema, SchemaError, SubRelation, fileio, relation)
from orsetdb.selection import ResolutionTrace, TraceStep


def _typed_relation():
    return relation([("name", "string"), ("year", "int"), ("score", "float"),
                     ("hired", "date")], [
        [[("ann", 0.5), (None, 0.5)], 1999, [(0.5, 0.25), (1.5, 0.75)],
         datetime.date(2020, 1, 2)],
        ["bob", [(1980, 0.25), (1990, 0.75)], 2.5,
         [(datetime.date(2001, 2, 3), 0.4), (None, 0.6)]],
    ])


def test_relation_roundtrip(tmp_path):
    rel = _typed_relation()
    path = tmp_path / "rel.jsonl"
    fileio.save_relation(rel, path)
    back = fileio.load_relation(path)
    assert back == rel


def test_zero_probability_choice_stripped(tmp_path, caplog):
    path = tmp_path / "rel.jsonl"
    path.write_text(
        '{"schema": [{"name": "a", "kind": "string"}]}\n'
        '{"a": [["x", 1.0], ["y", 0.0]]}\n', encoding="utf-8")
    import logging
    with caplog.at_level(logging.WARNING):
        rel = fileio.load_relation(path)
    assert rel.cell(0, 0).values == ("x",)
    assert any("zero-probability" in r.message for r in caplog.records)


def test_bad_normalization_rejected(tmp_path):
    path = tmp_path / "rel.jsonl"
    path.write_text(
        '{"schema": [{"name": "a", "kind": "string"}]}\n'
        '{"a": [["x", 0.5], ["y", 0.4]]}\n', encoding="utf-8")
    with pytest.raises(SchemaError):
        fileio.load_relation(path)


def test_subrelation_roundtrip_multirow(tmp_path):
    rel = relation([("a", "string"), ("b", "string")], [
        [[("x", 0.6), ("y", 0.4)], [("u", 0.7), ("v", 0.3)]],
    ])
    rows = ((
        (frozenset({0}), frozenset({0})),
        (frozenset({1}), frozenset({0, 1})),
    ),)
    sub = SubRelation(rel, rows, gamma=1.25)
    path = tmp_path / "sub.jsonl"
    fileio.save_subrelation(sub, path)
    back = fileio.load_subrelation(rel, path)
    assert back.rows == sub.rows
    assert back.gamma == pytest.approx(1.25)


def test_subrelation_value_not_in_base(tmp_path):
    rel = relation([("a", "string")], [["x"]])
    path = tmp_path / "sub.jsonl"
    path.write_text(
        '{"schema": [{"name": "a", "kind": "string"}], "gamma": 1.0}\n'
        '{"a": [["zzz", 1.0]]}\n', encoding="utf-8")
    with pytest.raises(SchemaError):
        fileio.load_subrelation(rel, path)


def test_external_roundtrip(tmp_path):
    ext = ExternalRelation("geo", ("city", "region"),
                           (("berlin", "eu"), ("boston", "us")))
    path = tmp_path / "geo.csv"
    fileio.save_external_csv(ext, path)
    back = fileio.load_external_csv("geo", path)
    assert back == ext


def test_predicate_table(tmp_path):
    path = tmp_path / "deg.csv"
    path.write_text("value,ok\nMBA,true\nAAB,false\n", encoding="utf-8")
    pred = fileio.load_predicate_csv(path)
    assert pred("MBA") is True
    assert pred("AAB") is False
    assert pred("unknown") is False
    assert pred(None) is False


def test_ground_truth_roundtrip(tmp_path):
    schema = Schema((("name", "string"), ("year", "int"), ("hired", "date")))
    rows = [("ann", 1999, datetime.date(2020, 1, 2)), ("bob", 1980, None)]
    path = tmp_path / "truth.csv"
    fileio.save_ground_truth(schema, rows, path)
    assert fileio.load_ground_truth(schema, path) == rows


def test_trace_csv(tmp_path):
    trace = ResolutionTrace(
        steps=[TraceStep(1, "ic1@t0", 0.25, 0.9, 0.05, 0.85, 1.5),
               TraceStep(2, "ic2@k('a',)", -0.1, 0.8, 0.0, 0.8, 2.0)],
        termination="exhausted", pc=0.9, gamma=1.11, mode="greedy",
        utility_mode="exact", seed=0)
    path = tmp_path / "trace.csv"
    fileio.save_trace_csv(trace, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,target,utility,cr,ir,q,elapsed_ms"
    assert lines[1].startswith("1,ic1@t0,0.25,0.9,0.05,0.85,")
    assert len(lines) == 3
