"""Line-oriented constraint DSL: parser, validator and pretty-printer.

One constraint per line, ``#`` comments, case-insensitive keywords:

    CHECK ATTR <attr> : <expr>
    CHECK TUPLE (<attrs>) : <expr>
    FD (<attrs>) -> (<attrs>)
    IND (<attrs>) IN <ext>.(<cols>)
    AGG GROUP BY (<attrs>) COUNT < <int>
    AGG GROUP BY (<attrs>) <SUM|AVG|COUNT>(<attr>) <=|<|= <num>
    SET (SELECT <attr> WHERE <expr>) SUBSETOF <ext>.(<col>)

Expressions support comparisons, IN-set membership, IS [NOT] NULL,
registered predicate calls, and NOT/AND/OR/IMPLIES. Parsing is
deterministic, never partially accepts input, and round-trips through
``to_dsl`` (parse-print-parse is a fixed point on the AST).
"""

from __future__ import annotations

import datetime
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .constraints import (And, AttrRef, AttributeCheck, AggCount, AggExp, BoolLiteral,
                          Comparison, Constraint, ConstraintSet, ExternalRelation, FD,
                          Implies, IND, Literal, Membership, Not, NullTest, Or,
                          PredicateCall, SetConstraint, TupleCheck, expr_attrs,
                          DEFAULT_MAX_TUPLE_ARITY)
from .errors import OrsetError
from .model import Schema


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self):
        return f"{self.line}:{self.col}: {self.message}"


class DslError(OrsetError):
    def __init__(self, diagnostics: Sequence[Diagnostic]):
        self.diagnostics = tuple(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<comment>\#.*)
  | (?P<number>-?\d+(?:\.\d+)?)
  | (?P<string>'(?:[^']|'')*'|"(?:[^"]|"")*")
  | (?P<ident>[A-Za-z_](?:[A-Za-z0-9_-]*[A-Za-z0-9_])?)
  | (?P<op>->|<=|>=|!=|[<>=(),:.*])
""", re.VERBOSE)

_KEYWORDS = {
    "CHECK", "ATTR", "TUPLE", "FD", "IND", "IN", "AGG", "GROUP", "BY", "COUNT",
    "SUM", "AVG", "SET", "SELECT", "WHERE", "SUBSETOF", "AND", "OR", "NOT",
    "IMPLIES", "IS", "NULL", "TRUE", "FALSE",
}


@dataclass(frozen=True)
class _Tok:
    kind: str  # number | string | ident | op | eol
    text: str
    col: int


def _tokenize_line(line: str, lineno: int) -> list[_Tok]:
    toks, pos = [], 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if not m:
            raise DslError([Diagnostic(lineno, pos + 1, f"unexpected character {line[pos]!r}")])
        pos = m.end()
        if m.lastgroup in ("ws", "comment"):
            continue
        toks.append(_Tok(m.lastgroup, m.group(), m.start() + 1))
    toks.append(_Tok("eol", "", len(line) + 1))
    return toks


class _LineParser:
    def __init__(self, toks: list[_Tok], lineno: int, schema: Schema,
                 externals: Mapping[str, ExternalRelation],
                 registry: Mapping[str, Callable], max_tuple_arity: int):
        self.toks = toks
        self.i = 0
        self.lineno = lineno
        self.schema = schema
        self.externals = externals
        self.registry = registry
        self.max_tuple_arity = max_tuple_arity

    # -- token helpers ----------------------------------------------------
    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.peek()
        raise DslError([Diagnostic(self.lineno, tok.col, msg)])

    def expect_op(self, op: str) -> _Tok:
        t = self.peek()
        if t.kind != "op" or t.text != op:
            self.fail(f"expected {op!r}, found {t.text or 'end of line'!r}")
        return self.next()

    def at_keyword(self, kw: str) -> bool:
        t = self.peek()
        return t.kind == "ident" and t.text.upper() == kw

    def expect_keyword(self, kw: str) -> _Tok:
        if not self.at_keyword(kw):
            self.fail(f"expected {kw}, found {self.peek().text or 'end of line'!r}")
        return self.next()

    def expect_ident(self, what: str = "identifier") -> _Tok:
        t = self.peek()
        if t.kind != "ident":
            self.fail(f"expected {what}, found {t.text or 'end of line'!r}")
        if t.text.upper() in _KEYWORDS:
            self.fail(f"keyword {t.text!r} cannot be used as {what}")
        return self.next()

    def expect_eol(self):
        t = self.peek()
        if t.kind != "eol":
            self.fail(f"unexpected trailing input {t.text!r}")

    # -- attribute / list helpers ------------------------------------------
    def attr_name(self) -> str:
        t = self.expect_ident("attribute name")
        if t.text not in self.schema.names:
            self.fail(f"unknown attribute {t.text!r}", t)
        return t.text

    def attr_list(self) -> tuple[str, ...]:
        self.expect_op("(")
        names = [self.attr_name()]
        while self.peek().kind == "op" and self.peek().text == ",":
            self.next()
            names.append(self.attr_name())
        self.expect_op(")")
        return tuple(names)

    def ident_list(self) -> tuple[str, ...]:
        self.expect_op("(")
        names = [self.expect_ident("column name").text]
        while self.peek().kind == "op" and self.peek().text == ",":
            self.next()
            names.append(self.expect_ident("column name").text)
        self.expect_op(")")
        return tuple(names)

    def external_ref(self, n_cols: int | None = None) -> tuple[str, tuple[str, ...]]:
        t = self.expect_ident("external relation name")
        if t.text not in self.externals:
            self.fail(f"unknown external relation {t.text!r}", t)
        ext = self.externals[t.text]
        self.expect_op(".")
        cols = self.ident_list()
        for c in cols:
            if c not in ext.columns:
                self.fail(f"external relation {t.text!r} has no column {c!r}", t)
        if n_cols is not None and len(cols) != n_cols:
            self.fail(f"expected {n_cols} external column(s), found {len(cols)}", t)
        return t.text, cols

    # -- expressions -------------------------------------------------------
    def expression(self):
        left = self.or_expr()
        if self.at_keyword("IMPLIES"):
            self.next()
            return Implies(left, self.expression())
        return left

    def or_expr(self):
        items = [self.and_expr()]
        while self.at_keyword("OR"):
            self.next()
            items.append(self.and_expr())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def and_expr(self):
        items = [self.not_expr()]
        while self.at_keyword("AND"):
            self.next()
            items.append(self.not_expr())
        return items[0] if len(items) == 1 else And(tuple(items))

    def not_expr(self):
        if self.at_keyword("NOT"):
            self.next()
            return Not(self.not_expr())
        return self.primary()

    def literal(self):
        t = self.peek()
        if t.kind == "number":
            self.next()
            return Literal(float(t.text) if "." in t.text else int(t.text))
        if t.kind == "string":
            self.next()
            q = t.text[0]
            return Literal(t.text[1:-1].replace(q + q, q))
        if self.at_keyword("NULL"):
            self.next()
            return Literal(None)
        self.fail(f"expected literal, found {t.text or 'end of line'!r}")

    def operand(self):
        t = self.peek()
        if t.kind == "ident" and t.text.upper() not in _KEYWORDS:
            if t.text in self.schema.names:
                self.next()
                return AttrRef(t.text)
            self.fail(f"unknown attribute {t.text!r}", t)
        return self.literal()

    def primary(self):
        t = self.peek()
        if t.kind == "op" and t.text == "(":
            self.next()
            inner = self.expression()
            self.expect_op(")")
            return inner
        if self.at_keyword("TRUE"):
            self.next()
            return BoolLiteral(True)
        if self.at_keyword("FALSE"):
            self.next()
            return BoolLiteral(False)
        if t.kind == "ident" and t.text.upper() not in _KEYWORDS \
                and t.text not in self.schema.names:
            # predicate call: name(attr, ...)
            name = t.text
            self.next()
            if name not in self.registry:
                self.fail(f"unknown predicate {name!r} (not registered)", t)
            self.expect_op("(")
            args = [AttrRef(self.attr_name())]
            while self.peek().kind == "op" and self.peek().text == ",":
                self.next()
                args.append(AttrRef(self.attr_name()))
            self.expect_op(")")
            return PredicateCall(name, tuple(args))
        left = self.operand()
        nxt = self.peek()
        if nxt.kind == "ident" and nxt.text.upper() == "IS":
            if not isinstance(left, AttrRef):
                self.fail("IS NULL applies to an attribute")
            self.next()
            negated = False
            if self.at_keyword("NOT"):
                self.next()
                negated = True
            self.expect_keyword("NULL")
            return NullTest(left, negated)
        if nxt.kind == "ident" and nxt.text.upper() == "IN":
            self.next()
            self.expect_op("(")
            values = [self._coerced_literal(left)]
            while self.peek().kind == "op" and self.peek().text == ",":
                self.next()
                values.append(self._coerced_literal(left))
            self.expect_op(")")
            return Membership(left, tuple(values))
        if nxt.kind == "op" and nxt.text in ("=", "!=", "<", "<=", ">", ">="):
            op = self.next().text
            right = self.operand()
            return self._typed_comparison(left, op, right, nxt)
        self.fail(f"expected comparison, IN or IS after operand")

    def _attr_kind(self, operand):
        return self.schema.kind_of(operand.name) if isinstance(operand, AttrRef) else None

    def _coerce(self, lit: Literal, kind: str, tok: _Tok) -> Literal:
        v = lit.value
        if v is None:
            return lit
        try:
            if kind == "date" and isinstance(v, str):
                return Literal(datetime.date.fromisoformat(v))
            if kind == "string" and not isinstance(v, str):
                raise ValueError
            if kind == "int" and not isinstance(v, (int, float)):
                raise ValueError
            if kind == "int" and isinstance(v, float):
                if not v.is_integer():
                    return lit  # comparable against ints as-is
            if kind == "float" and not isinstance(v, (int, float)):
                raise ValueError
            if kind == "date" and not isinstance(v, (str, datetime.date)):
                raise ValueError
        except ValueError:
            self.fail(f"literal {v!r} does not match domain kind {kind!r}", tok)
        return lit

    def _coerced_literal(self, against) -> object:
        tok = self.peek()
        lit = self.literal()
        kind = self._attr_kind(against)
        if kind is not None:
            lit = self._coerce(lit, kind, tok)
        return lit.value

    def _typed_comparison(self, left, op, right, tok: _Tok):
        lk, rk = self._attr_kind(left), self._attr_kind(right)
        if lk and rk:
            numeric = {"int", "float"}
            if lk != rk and not (lk in numeric and rk in numeric):
                self.fail(f"cannot compare {lk} attribute with {rk} attribute", tok)
        elif lk and isinstance(right, Literal):
            right = self._coerce(right, lk, tok)
        elif rk and isinstance(left, Literal):
            left = self._coerce(left, rk, tok)
        return Comparison(left, op, right)

    # -- statements ----------------------------------------------------------
    def statement(self):
        if self.at_keyword("CHECK"):
            self.next()
            if self.at_keyword("ATTR"):
                self.next()
                attr = self.attr_name()
                self.expect_op(":")
                expr = self.expression()
                self.expect_eol()
                refs = expr_attrs(expr)
                if refs - {attr}:
                    self.fail(f"attribute check may only reference {attr!r}, "
                              f"found {sorted(refs - {attr})}")
                return AttributeCheck(attr, expr)
            if self.at_keyword("TUPLE"):
                self.next()
                attrs = self.attr_list()
                if len(attrs) > self.max_tuple_arity:
                    self.fail(f"tuple check arity {len(attrs)} exceeds maximum {self.max_tuple_arity}")
                self.expect_op(":")
                expr = self.expression()
                self.expect_eol()
                extra = expr_attrs(expr) - set(attrs)
                if extra:
                    self.fail(f"tuple check references undeclared attributes {sorted(extra)}")
                return TupleCheck(attrs, expr)
            self.fail("expected ATTR or TUPLE after CHECK")
        if self.at_keyword("FD"):
            self.next()
            lhs = self.attr_list()
            self.expect_op("->")
            rhs = self.attr_list()
            self.expect_eol()
            return FD(lhs, rhs)
        if self.at_keyword("IND"):
            self.next()
            attrs = self.attr_list()
            self.expect_keyword("IN")
            ext, cols = self.external_ref(n_cols=len(attrs))
            self.expect_eol()
            return IND(attrs, ext, cols)
        if self.at_keyword("AGG"):
            self.next()
            self.expect_keyword("GROUP")
            self.expect_keyword("BY")
            attrs = self.attr_list()
            if self.at_keyword("COUNT") and self.toks[self.i + 1].text != "(":
                self.next()
                self.expect_op("<")
                t = self.peek()
                if t.kind != "number" or "." in t.text:
                    self.fail("COUNT bound must be an integer")
                self.next()
                self.expect_eol()
                return AggCount(attrs, int(t.text))
            for fn in ("SUM", "AVG", "COUNT"):
                if self.at_keyword(fn):
                    self.next()
                    self.expect_op("(")
                    battr = self.attr_name()
                    self.expect_op(")")
                    if self.schema.kind_of(battr) not in ("int", "float"):
                        self.fail(f"aggregated attribute {battr!r} must be numeric")
                    t = self.peek()
                    if t.kind == "op" and t.text in ("<=", "<", "="):
                        theta = self.next().text
                    else:
                        self.fail("expected one of <=, <, = after aggregate")
                    num = self.peek()
                    if num.kind != "number":
                        self.fail("expected numeric bound")
                    self.next()
                    self.expect_eol()
                    val = float(num.text) if "." in num.text else int(num.text)
                    return AggExp(attrs, fn, battr, theta, float(val))
            self.fail("expected COUNT, SUM, AVG or COUNT(<attr>) after GROUP BY")
        if self.at_keyword("SET"):
            self.next()
            self.expect_op("(")
            self.expect_keyword("SELECT")
            attr = self.attr_name()
            self.expect_keyword("WHERE")
            cond = self.expression()
            self.expect_op(")")
            self.expect_keyword("SUBSETOF")
            ext, cols = self.external_ref(n_cols=1)
            self.expect_eol()
            return SetConstraint(attr, cond, ext, cols[0])
        self.fail(f"expected a constraint statement, found {self.peek().text!r}")


def parse_constraints(text: str, schema: Schema,
                      externals: Mapping[str, ExternalRelation] | None = None,
                      predicates: Mapping[str, Callable] | None = None,
                      max_tuple_arity: int = DEFAULT_MAX_TUPLE_ARITY) -> ConstraintSet:
    """Parse DSL source into a typed ConstraintSet.

    Raises DslError carrying every diagnostic found; no partial acceptance.
    """
    externals = dict(externals or {})
    predicates = dict(predicates or {})
    bodies, diagnostics = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        try:
            toks = _tokenize_line(raw, lineno)
            if len(toks) == 1:  # blank or comment-only
                continue
            p = _LineParser(toks, lineno, schema, externals, predicates, max_tuple_arity)
            bodies.append(p.statement())
        except DslError as e:
            diagnostics.extend(e.diagnostics)
    if diagnostics:
        raise DslError(diagnostics)
    constraints = tuple(Constraint(f"ic{i + 1}", b) for i, b in enumerate(bodies))
    return ConstraintSet(schema, constraints, externals, predicates)


def parse_expression(text: str, schema: Schema,
                     predicates: Mapping[str, Callable] | None = None):
    """Parse a standalone boolean expression (query predicates)."""
    toks = _tokenize_line(text, 1)
    p = _LineParser(toks, 1, schema, {}, dict(predicates or {}), DEFAULT_MAX_TUPLE_ARITY)
    expr = p.expression()
    p.expect_eol()
    return expr


# ---------------------------------------------------------------------------
# Pretty printing

def _quote(s: str) -> str:
    return "'" + s.replace("'", "''") + "'"


def _print_literal(v) -> str:
    if v is None:
        return "NULL"
    if isinstance(v, str):
        return _quote(v)
    if isinstance(v, datetime.date):
        return _quote(v.isoformat())
    if isinstance(v, float) and v.is_integer():
        return str(v)  # keep the decimal point so it re-parses as float
    return repr(v)


def _print_operand(x) -> str:
    if isinstance(x, AttrRef):
        return x.name
    return _print_literal(x.value)


def print_expr(e, parent_prec: int = 0) -> str:
    if isinstance(e, BoolLiteral):
        s, prec = ("TRUE" if e.value else "FALSE"), 5
    elif isinstance(e, Comparison):
        s, prec = f"{_print_operand(e.left)} {e.op} {_print_operand(e.right)}", 5
    elif isinstance(e, Membership):
        vals = ", ".join(_print_literal(v) for v in e.values)
        s, prec = f"{_print_operand(e.operand)} IN ({vals})", 5
    elif isinstance(e, NullTest):
        s, prec = f"{e.attr.name} IS {'NOT ' if e.negated else ''}NULL", 5
    elif isinstance(e, PredicateCall):
        s, prec = f"{e.name}({', '.join(a.name for a in e.args)})", 5
    elif isinstance(e, Not):
        s, prec = f"NOT {print_expr(e.operand, 4)}", 4
    elif isinstance(e, And):
        s, prec = " AND ".join(print_expr(x, 4) for x in e.items), 3
    elif isinstance(e, Or):
        s, prec = " OR ".join(print_expr(x, 3) for x in e.items), 2
    elif isinstance(e, Implies):
        s, prec = f"{print_expr(e.antecedent, 2)} IMPLIES {print_expr(e.consequent, 1)}", 1
    else:
        raise OrsetError(f"cannot print expression {e!r}")
    return f"({s})" if prec < parent_prec else s


def print_constraint(c: Constraint) -> str:
    b = c.body
    if isinstance(b, AttributeCheck):
        return f"CHECK ATTR {b.attribute} : {print_expr(b.predicate)}"
    if isinstance(b, TupleCheck):
        return f"CHECK TUPLE ({', '.join(b.attributes)}) : {print_expr(b.predicate)}"
    if isinstance(b, FD):
        return f"FD ({', '.join(b.lhs)}) -> ({', '.join(b.rhs)})"
    if isinstance(b, IND):
        return f"IND ({', '.join(b.attrs)}) IN {b.external}.({', '.join(b.columns)})"
    if isinstance(b, AggCount):
        return f"AGG GROUP BY ({', '.join(b.group_by)}) COUNT < {b.bound}"
    if isinstance(b, AggExp):
        val = int(b.value) if float(b.value).is_integer() else b.value
        return f"AGG GROUP BY ({', '.join(b.group_by)}) {b.func}({b.attr}) {b.theta} {val}"
    if isinstance(b, SetConstraint):
        return (f"SET (SELECT {b.attr} WHERE {print_expr(b.condition)}) "
                f"SUBSETOF {b.external}.({b.column})")
    raise OrsetError(f"cannot print constraint {c!r}")


def to_dsl(cs: ConstraintSet) -> str:
    return "\n".join(print_constraint(c) for c in cs.constraints) + ("\n" if len(cs) else "")
