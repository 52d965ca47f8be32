"""Canonical file formats.

Relation files are JSON lines: a header object carrying the schema (and
optional gamma for sub-relations), then one object per tuple. A tuple is
either a bare row object {attr: [[value, prob], ...], ...} or
{"rows": [rowobj, ...]} for multi-row tuples. Dates are ISO strings, the
null marker is JSON null. Zero-probability choices are stripped at load
with a warning. Externals and predicate tables are header-bearing CSV;
ground truth is one CSV row of clean values per tuple; traces are CSV with
fixed columns step,target,utility,cr,ir,q,elapsed_ms.
"""

from __future__ import annotations

import csv
import datetime
import json
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

from .constraints import ExternalRelation, coerce_value
from .errors import SchemaError
from .model import (AttributeValue, AttributeWorld, Schema, SubRelation,
                    UncertainRelation, UncertainTuple)

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("step", "target", "utility", "cr", "ir", "q", "elapsed_ms")


def _encode_value(v):
    if isinstance(v, datetime.date):
        return v.isoformat()
    return v


def _decode_value(v, kind: str):
    if v is None:
        return None
    if kind == "date":
        if not isinstance(v, str):
            raise SchemaError(f"date value must be an ISO string, got {v!r}")
        return datetime.date.fromisoformat(v)
    if kind == "int":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"int value expected, got {v!r}")
        if isinstance(v, float):
            if not v.is_integer():
                raise SchemaError(f"non-integral value {v!r} for int attribute")
            return int(v)
        return v
    if kind == "float":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"numeric value expected, got {v!r}")
        return float(v)
    if kind == "string":
        if not isinstance(v, str):
            raise SchemaError(f"string value expected, got {v!r}")
        return v
    raise SchemaError(f"unknown kind {kind!r}")


def _header_obj(schema: Schema, gamma: float | None) -> dict:
    h = {"schema": [{"name": n, "kind": k} for n, k in schema.attributes]}
    if gamma is not None:
        h["gamma"] = gamma
    return h


def _row_obj(schema: Schema, cell_lists) -> dict:
    return {name: [[_encode_value(v), p] for v, p in cells]
            for (name, _), cells in zip(schema.attributes, cell_lists)}


def save_relation(rel: UncertainRelation, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_header_obj(rel.schema, None)) + "\n")
        for t in rel.tuples:
            cells = [[(c.value, c.prob) for c in cell.choices] for cell in t.cells]
            fh.write(json.dumps(_row_obj(rel.schema, cells)) + "\n")


def save_subrelation(sub: SubRelation, path) -> None:
    rel = sub.base
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_header_obj(rel.schema, sub.gamma)) + "\n")
        for i, tuple_rows in enumerate(sub.rows):
            row_objs = []
            for row in tuple_rows:
                cells = []
                for j, retained in enumerate(row):
                    cell = rel.cell(i, j)
                    cells.append([(cell.choices[c].value, cell.choices[c].prob)
                                  for c in sorted(retained)])
                row_objs.append(_row_obj(rel.schema, cells))
            if len(row_objs) == 1:
                fh.write(json.dumps(row_objs[0]) + "\n")
            else:
                fh.write(json.dumps({"rows": row_objs}) + "\n")


@dataclass
class ParsedRelationFile:
    """Raw structural parse: schema, optional gamma, per tuple a list of rows,
    each row mapping attribute slot -> list of (value, prob)."""

    schema: Schema
    gamma: float | None
    tuples: list[list[list[list[tuple[object, float]]]]]


def parse_relation_file(path) -> ParsedRelationFile:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty relation file")
    header = json.loads(lines[0])
    if "schema" not in header:
        raise SchemaError(f"{path}: first line must be a header object with a schema")
    schema = Schema(tuple((a["name"], a["kind"]) for a in header["schema"]))
    gamma = header.get("gamma")
    tuples = []
    for lineno, ln in enumerate(lines[1:], start=2):
        obj = json.loads(ln)
        row_objs = obj["rows"] if "rows" in obj else [obj]
        rows = []
        for row_obj in row_objs:
            row = []
            for name, kind in schema.attributes:
                if name not in row_obj:
                    raise SchemaError(f"{path}:{lineno}: missing attribute {name!r}")
                pairs = [( _decode_value(v, kind), float(p)) for v, p in row_obj[name]]
                row.append(pairs)
            rows.append(row)
        tuples.append(rows)
    return ParsedRelationFile(schema, gamma, tuples)


def load_relation(path) -> UncertainRelation:
    parsed = parse_relation_file(path)
    tuples = []
    for i, rows in enumerate(parsed.tuples):
        if len(rows) != 1:
            raise SchemaError(f"{path}: tuple {i} has {len(rows)} rows; a base relation is single-row")
        cells = []
        for (name, kind), pairs in zip(parsed.schema.attributes, rows[0]):
            kept = [(v, p) for v, p in pairs if p > 0.0]
            if len(kept) < len(pairs):
                log.warning("%s: tuple %d attribute %s: stripped %d zero-probability choice(s)",
                            path, i, name, len(pairs) - len(kept))
            cells.append(AttributeWorld(tuple(AttributeValue(v, p) for v, p in kept), kind))
        tuples.append(UncertainTuple(tuple(cells), tuple_id=i))
    return UncertainRelation(parsed.schema, tuple(tuples))


def load_subrelation(base: UncertainRelation, path) -> SubRelation:
    """Map a sub-relation file back onto its base relation by value."""
    parsed = parse_relation_file(path)
    if parsed.schema != base.schema:
        raise SchemaError(f"{path}: schema differs from the base relation")
    if len(parsed.tuples) != base.n:
        raise SchemaError(f"{path}: {len(parsed.tuples)} tuples, base has {base.n}")
    all_rows = []
    for i, rows in enumerate(parsed.tuples):
        sub_rows = []
        for row in rows:
            retained = []
            for j, pairs in enumerate(row):
                cell = base.cell(i, j)
                idxs = set()
                for v, _ in pairs:
                    try:
                        idxs.add(cell.index_of(v))
                    except KeyError:
                        raise SchemaError(
                            f"{path}: tuple {i} attribute {base.schema.names[j]}: "
                            f"value {v!r} not among the base choices")
                retained.append(frozenset(idxs))
            sub_rows.append(tuple(retained))
        all_rows.append(tuple(sub_rows))
    return SubRelation(base, tuple(all_rows), parsed.gamma if parsed.gamma is not None else 1.0)


# ---------------------------------------------------------------------------
# CSV side files

def load_external_csv(name: str, path) -> ExternalRelation:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            columns = tuple(next(reader))
        except StopIteration:
            raise SchemaError(f"{path}: empty external relation file")
        rows = tuple(tuple(r) for r in reader)
    return ExternalRelation(name, columns, rows)


def save_external_csv(ext: ExternalRelation, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ext.columns)
        for row in ext.rows:
            w.writerow(["" if v is None else v for v in row])


def load_predicate_csv(path):
    """Two-column CSV (value, boolean) -> unary predicate; unseen values are False."""
    truthy = {"1", "true", "yes", "y", "t"}
    table: dict[str, bool] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise SchemaError(f"{path}: predicate table needs two columns")
        for row in reader:
            if len(row) < 2:
                continue
            table[row[0]] = row[1].strip().lower() in truthy

    def predicate(value) -> bool:
        if value is None:
            return False
        return table.get(str(value), False)

    return predicate


def save_ground_truth(schema: Schema, rows: Sequence[tuple], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(schema.names)
        for row in rows:
            w.writerow(["" if v is None else _encode_value(v) for v in row])


def load_ground_truth(schema: Schema, path) -> list[tuple]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != schema.names:
            raise SchemaError(f"{path}: ground truth header does not match the schema")
        for row in reader:
            vals = []
            for (name, kind), raw in zip(schema.attributes, row):
                vals.append(None if raw == "" else coerce_value(raw, kind))
            out.append(tuple(vals))
    return out


def save_trace_csv(trace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for s in trace.steps:
            w.writerow([s.step, s.target_id, f"{s.utility:.9g}", f"{s.cr:.9g}",
                        f"{s.ir:.9g}", f"{s.q:.9g}", f"{s.elapsed_ms:.3f}"])
