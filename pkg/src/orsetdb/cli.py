"""Command-line front end.

Subcommands: validate, resolve, quality, query, eval, experiment, generate.
Exit codes: 0 ok, 1 diagnostics or errors, 2 completed with
annihilation/infeasibility warnings. All commands are deterministic given
--seed; output is UTF-8 JSON (or CSV files where noted).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import fileio
from .constraints import ConstraintSet, compile_expr
from .dsl import DslError, parse_constraints, parse_expression, to_dsl
from .errors import OrsetError
from .estimation import SamplerConfig, sampled_quality
from .evaluate import evaluate
from .generator import GeneratorConfig, generate
from .model import SubRelation
from .oracle import exact_quality
from .selection import ResolveConfig, greedy_resolve, resolve_all
from .views import RelationView

PROFILES = {
    "default": (0.05, 0.9),
    "fast": (0.1, 0.8),
    "precise": (0.02, 0.95),
}


def _add_side_inputs(p: argparse.ArgumentParser):
    p.add_argument("--external", action="append", default=[], metavar="NAME=CSV",
                   help="external relation for IND/SET constraints (repeatable)")
    p.add_argument("--predicate", action="append", default=[], metavar="NAME=CSV",
                   help="two-column (value,bool) predicate table (repeatable)")


def _add_sampling(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples-profile", choices=sorted(PROFILES), default="default")
    p.add_argument("--workers", type=int, default=1)


def _sampler(args) -> SamplerConfig:
    t, conf = PROFILES[args.samples_profile]
    return SamplerConfig(master_seed=args.seed, error_t=t, confidence=conf,
                         workers=args.workers)


def _load_side_inputs(args):
    externals = {}
    for spec in args.external:
        name, _, path = spec.partition("=")
        if not path:
            raise OrsetError(f"--external expects NAME=PATH, got {spec!r}")
        externals[name] = fileio.load_external_csv(name, path)
    predicates = {}
    for spec in args.predicate:
        name, _, path = spec.partition("=")
        if not path:
            raise OrsetError(f"--predicate expects NAME=PATH, got {spec!r}")
        predicates[name] = fileio.load_predicate_csv(path)
    return externals, predicates


def _load_inputs(args):
    rel = fileio.load_relation(args.relation)
    externals, predicates = _load_side_inputs(args)
    with open(args.constraints, "r", encoding="utf-8") as fh:
        text = fh.read()
    cs = parse_constraints(text, rel.schema, externals, predicates)
    return rel, cs


def _emit(obj) -> None:
    print(json.dumps(obj))


# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    diagnostics = []
    rel = None
    try:
        rel = fileio.load_relation(args.relation)
    except (OrsetError, ValueError, KeyError) as e:
        diagnostics.append({"source": "relation", "message": str(e)})
    if rel is not None:
        try:
            _load_inputs(args)
        except DslError as e:
            diagnostics.extend({"source": "constraints", "line": d.line, "col": d.col,
                                "message": d.message} for d in e.diagnostics)
        except OrsetError as e:
            diagnostics.append({"source": "constraints", "message": str(e)})
    for d in diagnostics:
        _emit(d)
    if not diagnostics:
        _emit({"status": "ok"})
    return 1 if diagnostics else 0


def _resolve_config(args) -> ResolveConfig:
    return ResolveConfig(mode=args.mode, rows=args.rows, threshold=args.threshold,
                         utility_mode=args.utilities, sampler=_sampler(args))


def cmd_resolve(args) -> int:
    rel, cs = _load_inputs(args)
    cfg = _resolve_config(args)
    run = greedy_resolve if args.mode == "greedy" else resolve_all
    sub, trace = run(rel, cs, cfg)
    out = Path(args.out) if args.out else Path(args.relation).with_suffix(".subrel.jsonl")
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
    fileio.save_subrelation(sub, out)
    fileio.save_trace_csv(trace, trace_path)
    last_q = trace.steps[-1].q if trace.steps else 1.0 - (1.0 - trace.pc)
    _emit({"out": str(out), "trace": str(trace_path), "pc": trace.pc, "gamma": trace.gamma,
           "steps": len(trace.steps), "termination": trace.termination,
           "utility_mode": trace.utility_mode, "q_estimate": last_q,
           "skipped": trace.skipped_any})
    return 2 if trace.skipped_any else 0


def cmd_quality(args) -> int:
    rel, cs = _load_inputs(args)
    sub = fileio.load_subrelation(rel, args.subrelation)
    if args.exact:
        report = exact_quality(rel, cs, sub)
    else:
        report = sampled_quality(rel, cs, sub, _sampler(args))
    _emit({"pc": report.pc, "cr": report.cr, "ir": report.ir, "quality": report.quality,
           "method": report.method, **({"metadata": report.metadata} if report.metadata else {})})
    return 0


def cmd_query(args) -> int:
    parsed = fileio.parse_relation_file(args.subrelation)
    schema = parsed.schema
    gamma = parsed.gamma if parsed.gamma is not None else 1.0
    _, predicates = _load_side_inputs(args)
    expr = parse_expression(args.where, schema, predicates)
    fn = compile_expr(expr, schema, predicates)
    for i, rows in enumerate(parsed.tuples):
        mass = 0.0
        for row in rows:
            for combo in _row_instances(row):
                values = [v for v, _ in combo]
                if fn(values):
                    p = 1.0
                    for _, prob in combo:
                        p *= prob
                    mass += p
        if mass > 0.0:
            _emit({"tuple": i, "mass": gamma * mass})
    return 0


def _row_instances(row):
    import itertools
    return itertools.product(*row)


def cmd_eval(args) -> int:
    parsed = fileio.parse_relation_file(args.subrelation)
    base = fileio.load_relation(args.base) if args.base else None
    truth = fileio.load_ground_truth(parsed.schema, args.truth)
    if base is not None:
        sub = fileio.load_subrelation(base, args.subrelation)
        report = evaluate(sub, truth)
    else:
        rel = fileio.load_relation(args.subrelation)
        report = evaluate(rel, truth)
    _emit({"precision": report.precision, "recall": report.recall, "f1": report.f1,
           "slots": [{"name": s.name, "precision": s.precision, "recall": s.recall,
                      "f1": s.f1, "returned": s.n_returned, "truth": s.n_truth}
                     for s in report.slots]})
    return 0


def _generator_config(args) -> GeneratorConfig:
    return GeneratorConfig(attrs=args.attrs, max_choices=args.max_choices, num_ics=args.ics,
                           max_arity=args.arity, num_tuples=args.tuples, alpha=args.alpha,
                           violation_rate=args.violation_rate, seed=args.seed)


def _write_instance(inst, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    fileio.save_relation(inst.relation, out_dir / "relation.jsonl")
    (out_dir / "constraints.dsl").write_text(to_dsl(inst.constraints), encoding="utf-8")
    for name, ext in sorted(inst.externals.items()):
        fileio.save_external_csv(ext, out_dir / f"{name}.csv")
    fileio.save_ground_truth(inst.relation.schema, inst.clean_values, out_dir / "truth.csv")


def cmd_generate(args) -> int:
    inst = generate(_generator_config(args))
    out_dir = Path(args.out_dir)
    _write_instance(inst, out_dir)
    _emit({"out_dir": str(out_dir), "tuples": inst.relation.n, "attrs": inst.relation.s,
           "ics": len(inst.constraints), "uncertain_cells": sum(
               1 for t in inst.relation.tuples for c in t.cells if len(c) > 1)})
    return 0


def cmd_experiment(args) -> int:
    inst = generate(_generator_config(args))
    out_dir = Path(args.out_dir)
    _write_instance(inst, out_dir)
    sampler = _sampler(args)
    status = 0
    summary = {"out_dir": str(out_dir)}
    for mode, run in (("greedy", greedy_resolve), ("all", resolve_all)):
        cfg = ResolveConfig(mode=mode, rows=args.rows, threshold=args.threshold,
                            utility_mode=args.utilities, sampler=sampler)
        sub, trace = run(inst.relation, inst.constraints, cfg)
        fileio.save_subrelation(sub, out_dir / f"{mode}.subrel.jsonl")
        fileio.save_trace_csv(trace, out_dir / f"{mode}.trace.csv")
        final_q = trace.steps[-1].q if trace.steps else trace.pc / trace.pc - (1 - trace.pc)
        summary[mode] = {"steps": len(trace.steps), "termination": trace.termination,
                         "pc": trace.pc, "final_q": final_q}
        if trace.skipped_any:
            status = 2
    _emit(summary)
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="orsetdb",
                                 description="Factor integrity constraints into or-set uncertain relations")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a relation file and constraint DSL")
    p.add_argument("relation")
    p.add_argument("constraints")
    _add_side_inputs(p)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("resolve", help="compute an approximating sub-relation")
    p.add_argument("relation")
    p.add_argument("constraints")
    p.add_argument("--out")
    p.add_argument("--trace")
    p.add_argument("--mode", choices=("greedy", "all"), default="greedy")
    p.add_argument("--rows", type=int, default=4, help="multi-row budget M (1 = single-row)")
    p.add_argument("--threshold", type=float, default=0.0, help="consistent-mass floor B")
    p.add_argument("--utilities", choices=("auto", "exact", "sampled"), default="auto")
    _add_side_inputs(p)
    _add_sampling(p)
    p.set_defaults(fn=cmd_resolve)

    p = sub.add_parser("quality", help="score a sub-relation against its base + constraints")
    p.add_argument("relation")
    p.add_argument("constraints")
    p.add_argument("subrelation")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--exact", action="store_true")
    g.add_argument("--sampled", action="store_true")
    _add_side_inputs(p)
    _add_sampling(p)
    p.set_defaults(fn=cmd_quality)

    p = sub.add_parser("query", help="per-tuple recalibrated mass of a selection predicate")
    p.add_argument("subrelation")
    p.add_argument("--where", required=True)
    _add_side_inputs(p)
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("eval", help="precision/recall against a ground-truth file")
    p.add_argument("subrelation")
    p.add_argument("truth")
    p.add_argument("--base", help="base relation (to interpret a sub-relation file)")
    p.set_defaults(fn=cmd_eval)

    for name, help_text in (("generate", "emit a synthetic instance"),
                            ("experiment", "generate, resolve greedy vs all, emit traces")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--tuples", type=int, default=20)
        p.add_argument("--attrs", type=int, default=5)
        p.add_argument("--max-choices", type=int, default=3)
        p.add_argument("--ics", type=int, default=5)
        p.add_argument("--arity", type=int, default=2)
        p.add_argument("--alpha", type=float, default=0.2)
        p.add_argument("--violation-rate", type=float, default=None)
        if name == "experiment":
            p.add_argument("--rows", type=int, default=4)
            p.add_argument("--threshold", type=float, default=0.0)
            p.add_argument("--utilities", choices=("auto", "exact", "sampled"), default="auto")
            _add_sampling(p)
            p.set_defaults(fn=cmd_experiment)
        else:
            p.add_argument("--seed", type=int, default=0)
            p.set_defaults(fn=cmd_generate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DslError as e:
        for d in e.diagnostics:
            _emit({"source": "constraints", "line": d.line, "col": d.col, "message": d.message})
        return 1
    except OrsetError as e:
        _emit({"error": type(e).__name__, "message": str(e)})
        return 1


if __name__ == "__main__":
    sys.exit(main())
