"""Typed integrity constraints and their violation semantics.

Three levels: attribute checks (single cell), tuple checks (a few cells of
one tuple), and relation-level constraints (FD, IND, COUNT / expression
aggregation, SET) that span tuples. Evaluation is pure; parsed constraint
sets are immutable and safe to share across workers.

NULL semantics: a null marker satisfies no comparison except an explicit
IS NULL test; grouping (FDs, aggregations) treats null as an ordinary value
equal to itself; SUM/AVG/COUNT skip null contributions.
"""

from __future__ import annotations

import datetime
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .errors import ArityBoundError, SchemaError
from .model import Schema, UncertainRelation, UncertainTuple, WorldAssignment

ARITY_PRODUCT_BOUND = 10 ** 5
DEFAULT_MAX_TUPLE_ARITY = 4


# ---------------------------------------------------------------------------
# Expression AST (shared by attribute checks, tuple checks and SET conditions)

@dataclass(frozen=True)
class AttrRef:
    name: str


@dataclass(frozen=True)
class Literal:
    value: object


@dataclass(frozen=True)
class Comparison:
    left: object
    op: str  # = != < <= > >=
    right: object


@dataclass(frozen=True)
class Membership:
    operand: object
    values: tuple


@dataclass(frozen=True)
class NullTest:
    attr: AttrRef
    negated: bool = False


@dataclass(frozen=True)
class PredicateCall:
    name: str
    args: tuple[AttrRef, ...]


@dataclass(frozen=True)
class Not:
    operand: object


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


@dataclass(frozen=True)
class Implies:
    antecedent: object
    consequent: object


@dataclass(frozen=True)
class BoolLiteral:
    value: bool


def expr_attrs(expr) -> set[str]:
    """Attribute names referenced anywhere in an expression."""
    out: set[str] = set()

    def walk(e):
        if isinstance(e, AttrRef):
            out.add(e.name)
        elif isinstance(e, Comparison):
            walk(e.left)
            walk(e.right)
        elif isinstance(e, Membership):
            walk(e.operand)
        elif isinstance(e, NullTest):
            out.add(e.attr.name)
        elif isinstance(e, PredicateCall):
            for a in e.args:
                out.add(a.name)
        elif isinstance(e, Not):
            walk(e.operand)
        elif isinstance(e, (And, Or)):
            for x in e.items:
                walk(x)
        elif isinstance(e, Implies):
            walk(e.antecedent)
            walk(e.consequent)

    walk(expr)
    return out


_CMP = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def compile_expr(expr, schema: Schema, registry: Mapping[str, Callable]) -> Callable[[Sequence], bool]:
    """Compile an expression into a closure over a full-width value tuple.

    Only the slots of attributes the expression references are ever read,
    so callers may leave unrelated slots as None placeholders.
    """

    def operand(e):
        if isinstance(e, AttrRef):
            slot = schema.index(e.name)
            return lambda vals: vals[slot]
        if isinstance(e, Literal):
            v = e.value
            return lambda vals: v
        raise SchemaError(f"invalid operand {e!r}")

    if isinstance(expr, BoolLiteral):
        v = expr.value
        return lambda vals: v
    if isinstance(expr, Comparison):
        lf, rf = operand(expr.left), operand(expr.right)
        op = _CMP[expr.op]

        def cmp(vals, lf=lf, rf=rf, op=op):
            a, b = lf(vals), rf(vals)
            if a is None or b is None:
                return False
            return op(a, b)

        return cmp
    if isinstance(expr, Membership):
        f = operand(expr.operand)
        values = frozenset(expr.values)
        return lambda vals: vals is not None and f(vals) is not None and f(vals) in values
    if isinstance(expr, NullTest):
        slot = schema.index(expr.attr.name)
        if expr.negated:
            return lambda vals: vals[slot] is not None
        return lambda vals: vals[slot] is None
    if isinstance(expr, PredicateCall):
        fn = registry[expr.name]
        slots = tuple(schema.index(a.name) for a in expr.args)
        return lambda vals: bool(fn(*(vals[s] for s in slots)))
    if isinstance(expr, Not):
        f = compile_expr(expr.operand, schema, registry)
        return lambda vals: not f(vals)
    if isinstance(expr, And):
        fs = [compile_expr(x, schema, registry) for x in expr.items]
        return lambda vals: all(f(vals) for f in fs)
    if isinstance(expr, Or):
        fs = [compile_expr(x, schema, registry) for x in expr.items]
        return lambda vals: any(f(vals) for f in fs)
    if isinstance(expr, Implies):
        fa = compile_expr(expr.antecedent, schema, registry)
        fc = compile_expr(expr.consequent, schema, registry)
        return lambda vals: (not fa(vals)) or fc(vals)
    raise SchemaError(f"unknown expression node {expr!r}")


# ---------------------------------------------------------------------------
# Constraint bodies

@dataclass(frozen=True)
class AttributeCheck:
    attribute: str
    predicate: object


@dataclass(frozen=True)
class TupleCheck:
    attributes: tuple[str, ...]
    predicate: object


@dataclass(frozen=True)
class FD:
    lhs: tuple[str, ...]
    rhs: tuple[str, ...]


@dataclass(frozen=True)
class IND:
    attrs: tuple[str, ...]
    external: str
    columns: tuple[str, ...]


@dataclass(frozen=True)
class AggCount:
    group_by: tuple[str, ...]
    bound: int  # COUNT < bound must hold per group


@dataclass(frozen=True)
class AggExp:
    group_by: tuple[str, ...]
    func: str  # SUM | AVG | COUNT
    attr: str
    theta: str  # = | <= | <
    value: float


@dataclass(frozen=True)
class SetConstraint:
    attr: str
    condition: object
    external: str
    column: str


@dataclass(frozen=True)
class ExternalRelation:
    """A fixed, certain relation referenced by IND and SET constraints."""

    name: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def column_index(self, col: str) -> int:
        try:
            return self.columns.index(col)
        except ValueError:
            raise KeyError(col)

    def value_set(self, cols: Sequence[str], kinds: Sequence[str]) -> frozenset:
        """Distinct projections onto ``cols``, coerced to the given kinds.

        Memoized per (cols, kinds): constraint sets bind the same external
        many times and the rows never change.
        """
        key = (tuple(cols), tuple(kinds))
        cache = getattr(self, "_value_set_cache", None)
        if cache is None:
            cache = {}
            object.__setattr__(self, "_value_set_cache", cache)
        got = cache.get(key)
        if got is not None:
            return got
        idxs = [self.column_index(c) for c in cols]
        if all(k == "string" for k in kinds) and \
                all(isinstance(row[i], str) for row in self.rows[:1] for i in idxs):
            out = frozenset(tuple(row[i] for i in idxs) for row in self.rows)
        else:
            out = frozenset(tuple(coerce_value(row[i], k) for i, k in zip(idxs, kinds))
                            for row in self.rows)
        cache[key] = out
        return out


def coerce_value(raw, kind: str):
    """Coerce a raw (often CSV string) value to a domain kind; None passes through."""
    if raw is None:
        return None
    if kind == "string":
        return raw if isinstance(raw, str) else str(raw)
    if isinstance(raw, str) and raw == "":
        return None
    if kind == "int":
        if isinstance(raw, bool):
            raise SchemaError(f"cannot coerce {raw!r} to int")
        if isinstance(raw, int):
            return raw
        if isinstance(raw, float) and raw.is_integer():
            return int(raw)
        return int(str(raw).strip())
    if kind == "float":
        if isinstance(raw, (int, float)) and not isinstance(raw, bool):
            return float(raw)
        return float(str(raw).strip())
    if kind == "date":
        if isinstance(raw, datetime.date):
            return raw
        return datetime.date.fromisoformat(str(raw).strip())
    raise SchemaError(f"unknown kind {kind!r}")


@dataclass(frozen=True)
class Constraint:
    id: str
    body: object

    @property
    def level(self) -> str:
        if isinstance(self.body, AttributeCheck):
            return "attribute"
        if isinstance(self.body, TupleCheck):
            return "tuple"
        return "relation"


class ConstraintSet:
    """An immutable, schema-bound set of constraints with compiled evaluators."""

    def __init__(self, schema: Schema, constraints: Sequence[Constraint],
                 externals: Mapping[str, ExternalRelation] | None = None,
                 registry: Mapping[str, Callable] | None = None):
        self.schema = schema
        self.constraints = tuple(constraints)
        self.externals = dict(externals or {})
        self.registry = dict(registry or {})
        self._compiled: dict[str, dict] = {}
        for c in self.constraints:
            self._compiled[c.id] = self._compile(c)

    def _compile(self, c: Constraint) -> dict:
        sch = self.schema
        body = c.body
        info: dict = {"constraint": c}
        if isinstance(body, AttributeCheck):
            info["slots"] = (sch.index(body.attribute),)
            info["fn"] = compile_expr(body.predicate, sch, self.registry)
        elif isinstance(body, TupleCheck):
            info["slots"] = tuple(sch.index(a) for a in body.attributes)
            info["fn"] = compile_expr(body.predicate, sch, self.registry)
        elif isinstance(body, FD):
            info["lhs"] = tuple(sch.index(a) for a in body.lhs)
            info["rhs"] = tuple(sch.index(a) for a in body.rhs)
            info["slots"] = info["lhs"] + info["rhs"]
        elif isinstance(body, IND):
            info["slots"] = tuple(sch.index(a) for a in body.attrs)
            ext = self.externals[body.external]
            kinds = tuple(sch.kind_of(a) for a in body.attrs)
            info["value_set"] = ext.value_set(body.columns, kinds)
        elif isinstance(body, AggCount):
            info["slots"] = tuple(sch.index(a) for a in body.group_by)
        elif isinstance(body, AggExp):
            gslots = tuple(sch.index(a) for a in body.group_by)
            info["gslots"] = gslots
            info["bslot"] = sch.index(body.attr)
            info["slots"] = gslots + (info["bslot"],)
        elif isinstance(body, SetConstraint):
            aslot = sch.index(body.attr)
            info["aslot"] = aslot
            info["cond"] = compile_expr(body.condition, sch, self.registry)
            cond_slots = tuple(sorted(sch.index(a) for a in expr_attrs(body.condition)))
            info["slots"] = tuple(sorted(set(cond_slots) | {aslot}))
            ext = self.externals[body.external]
            info["value_set"] = ext.value_set((body.column,), (sch.kind_of(body.attr),))
        else:
            raise SchemaError(f"unknown constraint body {body!r}")
        return info

    def info(self, c: Constraint) -> dict:
        return self._compiled[c.id]

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self) -> int:
        return len(self.constraints)

    def by_id(self, cid: str) -> Constraint:
        for c in self.constraints:
            if c.id == cid:
                return c
        raise KeyError(cid)

    @property
    def attribute_level(self) -> tuple[Constraint, ...]:
        return tuple(c for c in self.constraints if c.level == "attribute")

    @property
    def tuple_level(self) -> tuple[Constraint, ...]:
        return tuple(c for c in self.constraints if c.level == "tuple")

    @property
    def relation_level(self) -> tuple[Constraint, ...]:
        return tuple(c for c in self.constraints if c.level == "relation")

    def restrict(self, constraints: Iterable[Constraint]) -> "ConstraintSet":
        return ConstraintSet(self.schema, tuple(constraints), self.externals, self.registry)

    def local_levels(self) -> "ConstraintSet":
        """Attribute plus tuple level constraints only."""
        return self.restrict(self.attribute_level + self.tuple_level)


def empty_constraints(schema: Schema) -> ConstraintSet:
    return ConstraintSet(schema, ())


# ---------------------------------------------------------------------------
# Violation predicates

def check_attribute(cs: ConstraintSet, c: Constraint, value) -> bool:
    """Truth of an attribute check for a single candidate value."""
    if not isinstance(c.body, AttributeCheck):
        raise SchemaError(f"{c.id} is not an attribute check")
    info = cs.info(c)
    vals = [None] * len(cs.schema)
    vals[info["slots"][0]] = value
    return bool(info["fn"](vals))


def violating_combinations(cs: ConstraintSet, c: Constraint, t: UncertainTuple,
                           retained: Sequence[frozenset[int]] | None = None) -> frozenset[tuple[int, ...]]:
    """Choice-index combinations over the check's attributes on which it fails.

    ``retained`` restricts each cell to a subset of its choices (a Row view);
    by default the full attribute worlds are enumerated. Exhaustive: every
    combination in the cross-product is classified.
    """
    if not isinstance(c.body, (TupleCheck, AttributeCheck)):
        raise SchemaError(f"{c.id} is not a tuple-level or attribute-level check")
    info = cs.info(c)
    slots = info["slots"]
    fn = info["fn"]
    options = []
    size = 1
    for j in slots:
        idxs = sorted(retained[j]) if retained is not None else range(len(t.cells[j]))
        idxs = list(idxs)
        options.append(idxs)
        size *= len(idxs)
    if size > ARITY_PRODUCT_BOUND:
        raise ArityBoundError(
            f"{c.id}: cross-product of {size} combinations exceeds {ARITY_PRODUCT_BOUND}; "
            "reformulate the check over fewer/narrower attributes")
    vals = [None] * len(cs.schema)
    bad = []
    for combo in itertools.product(*options):
        for j, pick in zip(slots, combo):
            vals[j] = t.cells[j].choices[pick].value
        if not fn(vals):
            bad.append(tuple(combo))
    return frozenset(bad)


def _agg_value(func: str, count: int, total: float):
    if func == "COUNT":
        return count
    if count == 0:
        return None  # no non-null contributions: vacuously consistent
    if func == "SUM":
        return total
    if func == "AVG":
        return total / count
    raise SchemaError(f"unknown aggregate {func!r}")


def agg_satisfied(func: str, theta: str, bound: float, count: int, total: float) -> bool:
    v = _agg_value(func, count, total)
    if v is None:
        return True
    if theta == "=":
        return math.isclose(v, bound, rel_tol=1e-12, abs_tol=1e-9)
    if theta == "<=":
        return v <= bound
    if theta == "<":
        return v < bound
    raise SchemaError(f"unknown theta {theta!r}")


def world_satisfies(cs: ConstraintSet, rel: UncertainRelation, w: WorldAssignment,
                    externals: Mapping[str, ExternalRelation] | None = None) -> bool:
    """Reference consistency predicate: does the materialized world satisfy
    every constraint? This is the single semantics the oracle and all
    samplers must agree with.

    ``externals`` may override the set the constraints were parsed with
    (names must still resolve); value sets are then re-derived.
    """
    values = w.values(rel)
    return _values_satisfy(cs, values, externals)


def _values_satisfy(cs: ConstraintSet, values: Sequence[Sequence], externals=None) -> bool:
    for c in cs.constraints:
        info = cs.info(c)
        body = c.body
        if isinstance(body, (AttributeCheck, TupleCheck)):
            fn = info["fn"]
            if any(not fn(vals) for vals in values):
                return False
        elif isinstance(body, FD):
            lhs, rhs = info["lhs"], info["rhs"]
            seen: dict = {}
            for vals in values:
                key = tuple(vals[j] for j in lhs)
                bv = tuple(vals[j] for j in rhs)
                if seen.setdefault(key, bv) != bv:
                    return False
        elif isinstance(body, IND):
            vset = _resolved_value_set(cs, c, info, externals)
            slots = info["slots"]
            for vals in values:
                if tuple(vals[j] for j in slots) not in vset:
                    return False
        elif isinstance(body, AggCount):
            slots = info["slots"]
            counts = Counter(tuple(vals[j] for j in slots) for vals in values)
            if counts and max(counts.values()) >= body.bound:
                return False
        elif isinstance(body, AggExp):
            gslots, bslot = info["gslots"], info["bslot"]
            groups: dict = {}
            for vals in values:
                key = tuple(vals[j] for j in gslots)
                cnt, tot = groups.get(key, (0, 0.0))
                b = vals[bslot]
                if b is not None:
                    cnt, tot = cnt + 1, tot + b
                groups[key] = (cnt, tot)
            for cnt, tot in groups.values():
                if not agg_satisfied(body.func, body.theta, body.value, cnt, tot):
                    return False
        elif isinstance(body, SetConstraint):
            vset = _resolved_value_set(cs, c, info, externals)
            cond, aslot = info["cond"], info["aslot"]
            for vals in values:
                if cond(vals) and (vals[aslot],) not in vset:
                    return False
        else:
            raise SchemaError(f"unknown constraint body {body!r}")
    return True


def _resolved_value_set(cs, c, info, externals):
    if externals is None:
        return info["value_set"]
    body = c.body
    if isinstance(body, IND):
        ext = externals[body.external]
        kinds = tuple(cs.schema.kind_of(a) for a in body.attrs)
        return ext.value_set(body.columns, kinds)
    ext = externals[body.external]
    return ext.value_set((body.column,), (cs.schema.kind_of(body.attr),))


# ---------------------------------------------------------------------------
# Incremental consistency checking for block sampling.
#
# Tuples whose cells (restricted to a constraint's attributes) are certain
# contribute fixed structures computed once; per sampled block only dynamic
# tuples are folded in, and per free-cell combination only the tuples that
# own free cells are re-evaluated.

class _LocalHandler:
    """Per-tuple constraints: attribute/tuple checks, IND and SET membership."""

    def __init__(self, cs: ConstraintSet, c: Constraint, view):
        info = cs.info(c)
        body = c.body
        if isinstance(body, (AttributeCheck, TupleCheck)):
            fn = info["fn"]
            self.ok = fn
        elif isinstance(body, IND):
            slots, vset = info["slots"], info["value_set"]
            self.ok = lambda vals, s=slots, vs=vset: tuple(vals[j] for j in s) in vs
        else:  # SetConstraint
            cond, aslot, vset = info["cond"], info["aslot"], info["value_set"]
            self.ok = lambda vals, c=cond, a=aslot, vs=vset: (not c(vals)) or (vals[a],) in vs
        self.slots = info["slots"]
        self.always_false = False
        self.dynamic: set[int] = set()
        for i in range(view.n):
            if view.tuple_uncertain_on(i, self.slots):
                self.dynamic.add(i)
            elif not self.ok(view.certain_values(i)):
                self.always_false = True

    def check(self, values_by_tuple) -> bool:
        for i in self.dynamic:
            vals = values_by_tuple.get(i)
            if vals is not None and not self.ok(vals):
                return False
        return True

    def fold(self, values_by_tuple, eval_tuples):
        for i in self.dynamic:
            if i in eval_tuples:
                continue
            if not self.ok(values_by_tuple[i]):
                return False  # every combination in the block fails
        return True

    def check_refs(self, ctx, refs) -> bool:
        ok = self.ok
        for _, vals in refs:
            if not ok(vals):
                return False
        return True


class _FDHandler:
    def __init__(self, cs: ConstraintSet, c: Constraint, view):
        info = cs.info(c)
        self.lhs, self.rhs = info["lhs"], info["rhs"]
        self.slots = info["slots"]
        self.always_false = False
        self.dynamic: set[int] = set()
        self.static_map: dict = {}
        for i in range(view.n):
            if view.tuple_uncertain_on(i, self.slots):
                self.dynamic.add(i)
                continue
            vals = view.certain_values(i)
            key = tuple(vals[j] for j in self.lhs)
            bv = tuple(vals[j] for j in self.rhs)
            if self.static_map.setdefault(key, bv) != bv:
                self.always_false = True

    def check(self, values_by_tuple) -> bool:
        local: dict = {}
        for i in self.dynamic:
            vals = values_by_tuple.get(i)
            if vals is None:
                continue
            key = tuple(vals[j] for j in self.lhs)
            bv = tuple(vals[j] for j in self.rhs)
            prev = self.static_map.get(key)
            if prev is not None and prev != bv:
                return False
            if local.setdefault(key, bv) != bv:
                return False
        return True

    def fold(self, values_by_tuple, eval_tuples):
        merged = dict(self.static_map)
        for i in self.dynamic:
            if i in eval_tuples:
                continue
            vals = values_by_tuple[i]
            key = tuple(vals[j] for j in self.lhs)
            bv = tuple(vals[j] for j in self.rhs)
            if merged.setdefault(key, bv) != bv:
                return None
        return merged

    def check_refs(self, ctx, refs) -> bool:
        if len(refs) == 1:
            vals = refs[0][1]
            key = tuple(vals[j] for j in self.lhs)
            prev = ctx.get(key)
            return prev is None or prev == tuple(vals[j] for j in self.rhs)
        local: dict = {}
        for _, vals in refs:
            key = tuple(vals[j] for j in self.lhs)
            bv = tuple(vals[j] for j in self.rhs)
            prev = ctx.get(key)
            if prev is not None and prev != bv:
                return False
            if local.setdefault(key, bv) != bv:
                return False
        return True


class _AggCountHandler:
    def __init__(self, cs: ConstraintSet, c: Constraint, view):
        info = cs.info(c)
        self.slots = info["slots"]
        self.bound = c.body.bound
        self.always_false = False
        self.dynamic: set[int] = set()
        self.static_counts: Counter = Counter()
        for i in range(view.n):
            if view.tuple_uncertain_on(i, self.slots):
                self.dynamic.add(i)
                continue
            key = tuple(view.certain_values(i)[j] for j in self.slots)
            self.static_counts[key] += 1
            if self.static_counts[key] >= self.bound:
                self.always_false = True

    def check(self, values_by_tuple) -> bool:
        add: Counter = Counter()
        for i in self.dynamic:
            vals = values_by_tuple.get(i)
            if vals is None:
                continue
            key = tuple(vals[j] for j in self.slots)
            add[key] += 1
            if self.static_counts.get(key, 0) + add[key] >= self.bound:
                return False
        return True

    def fold(self, values_by_tuple, eval_tuples):
        merged = Counter(self.static_counts)
        for i in self.dynamic:
            if i in eval_tuples:
                continue
            key = tuple(values_by_tuple[i][j] for j in self.slots)
            merged[key] += 1
            if merged[key] >= self.bound:
                return None
        return merged

    def check_refs(self, ctx, refs) -> bool:
        if len(refs) == 1:
            vals = refs[0][1]
            return ctx.get(tuple(vals[j] for j in self.slots), 0) + 1 < self.bound
        add: Counter = Counter()
        for _, vals in refs:
            key = tuple(vals[j] for j in self.slots)
            add[key] += 1
            if ctx.get(key, 0) + add[key] >= self.bound:
                return False
        return True


class _AggExpHandler:
    def __init__(self, cs: ConstraintSet, c: Constraint, view):
        info = cs.info(c)
        self.view = view
        self.gslots, self.bslot = info["gslots"], info["bslot"]
        self.slots = info["slots"]
        body = c.body
        self.func, self.theta, self.value = body.func, body.theta, body.value
        self.always_false = False
        self.dynamic: set[int] = set()
        self.static_groups: dict = {}
        for i in range(view.n):
            if view.tuple_uncertain_on(i, self.slots):
                self.dynamic.add(i)
                continue
            vals = view.certain_values(i)
            key = tuple(vals[j] for j in self.gslots)
            cnt, tot = self.static_groups.get(key, (0, 0.0))
            b = vals[self.bslot]
            if b is not None:
                cnt, tot = cnt + 1, tot + b
            self.static_groups[key] = (cnt, tot)
        # keys no dynamic tuple can ever produce must satisfy the bound alone
        possible = set()
        for i in self.dynamic:
            possible |= view.possible_keys(i, self.gslots)
        self.touchable = possible
        for key, (cnt, tot) in self.static_groups.items():
            if key not in possible and not agg_satisfied(self.func, self.theta, self.value, cnt, tot):
                self.always_false = True

    def check(self, values_by_tuple) -> bool:
        groups: dict = {}
        realized = 0
        for i in self.dynamic:
            vals = values_by_tuple.get(i)
            if vals is None:
                continue
            realized += 1
            key = tuple(vals[j] for j in self.gslots)
            cnt, tot = groups.get(key, self.static_groups.get(key, (0, 0.0)))
            b = vals[self.bslot]
            if b is not None:
                cnt, tot = cnt + 1, tot + b
            groups[key] = (cnt, tot)
        for key, (cnt, tot) in groups.items():
            if not agg_satisfied(self.func, self.theta, self.value, cnt, tot):
                return False
        if realized == len(self.dynamic):
            # full world: touchable static groups that stayed untouched must hold alone
            for key in self.touchable:
                if key not in groups:
                    cnt, tot = self.static_groups.get(key, (0, 0.0))
                    if not agg_satisfied(self.func, self.theta, self.value, cnt, tot):
                        return False
        return True

    def fold(self, values_by_tuple, eval_tuples):
        merged = dict(self.static_groups)
        for i in self.dynamic:
            if i in eval_tuples:
                continue
            vals = values_by_tuple[i]
            key = tuple(vals[j] for j in self.gslots)
            cnt, tot = merged.get(key, (0, 0.0))
            b = vals[self.bslot]
            if b is not None:
                cnt, tot = cnt + 1, tot + b
            merged[key] = (cnt, tot)
        eval_possible: set = set()
        for i in eval_tuples:
            if i in self.dynamic:
                eval_possible |= self.view.possible_keys(i, self.gslots)
        pending = []
        for key, (cnt, tot) in merged.items():
            if not agg_satisfied(self.func, self.theta, self.value, cnt, tot):
                # additions can only fix an '=' group; <, <= only worsen
                if self.theta == "=" and key in eval_possible:
                    pending.append(key)
                else:
                    return None
        return merged, tuple(pending)

    def check_refs(self, ctx, refs) -> bool:
        merged, pending = ctx
        groups: dict = {}
        for _, vals in refs:
            key = tuple(vals[j] for j in self.gslots)
            cnt, tot = groups.get(key, merged.get(key, (0, 0.0)))
            b = vals[self.bslot]
            if b is not None:
                cnt, tot = cnt + 1, tot + b
            groups[key] = (cnt, tot)
        for key, (cnt, tot) in groups.items():
            if not agg_satisfied(self.func, self.theta, self.value, cnt, tot):
                return False
        for key in pending:
            if key not in groups:
                return False
        return True


class ConsistencyChecker:
    """Evaluates world consistency with static contributions precomputed.

    ``values_by_tuple`` maps tuple index -> full materialized value tuple,
    and must cover every tuple the view reports as uncertain for a full
    world check; partial maps are only valid for AggExp-free constraint
    sets folded against a block context (see estimation.block_avg_ratio).
    """

    def __init__(self, view, cs: ConstraintSet):
        self.view = view
        self.cs = cs
        self.handlers = []
        for c in cs.constraints:
            body = c.body
            if isinstance(body, (AttributeCheck, TupleCheck, IND, SetConstraint)):
                self.handlers.append(_LocalHandler(cs, c, view))
            elif isinstance(body, FD):
                self.handlers.append(_FDHandler(cs, c, view))
            elif isinstance(body, AggCount):
                self.handlers.append(_AggCountHandler(cs, c, view))
            elif isinstance(body, AggExp):
                self.handlers.append(_AggExpHandler(cs, c, view))
        self.always_false = any(h.always_false for h in self.handlers)

    def world_ok(self, values_by_tuple: Mapping[int, Sequence]) -> bool:
        if self.always_false:
            return False
        return all(h.check(values_by_tuple) for h in self.handlers)

    def start_block(self, fold_values: Mapping[int, Sequence], eval_values: Mapping[int, list]):
        """Fold fixed-tuple values once. ``eval_values`` maps the tuples that
        per-combination evaluation will mutate in place to their (live) value
        lists; the returned plan binds each handler directly to the
        references it must re-check, so per-combination work is independent
        of the relation size. Returns None when no world in the block can be
        consistent."""
        if self.always_false:
            return None
        eval_tuples = set(eval_values)
        plan = []
        for h in self.handlers:
            ctx = h.fold(fold_values, eval_tuples)
            if ctx is None or ctx is False:
                return None
            refs = [(i, eval_values[i]) for i in sorted(eval_tuples & h.dynamic)]
            if refs:
                plan.append((h, ctx, refs))
        return plan

    def block_world_ok(self, block_plan) -> bool:
        if block_plan is None:
            return False
        for h, ctx, refs in block_plan:
            if not h.check_refs(ctx, refs):
                return False
        return True
