"""Shared fixtures: the worked examples used throughout the suite.

Expected values in the tests are either asserted directly from the source
material or frozen from the exact enumeration oracle (hand-checked against
it before being written down); oracle tests cross-verify the frozen values.
"""

import pytest

from orsetdb import Schema, parse_constraints, relation

EMP_SCHEMA = [("name", "string"), ("job_title", "string"),
              ("division", "string"), ("degree", "string")]


def emp_constraints(text, externals=None, predicates=None):
    schema = Schema(tuple(EMP_SCHEMA))
    return parse_constraints(text, schema, externals, predicates)


@pytest.fixture
def fig1():
    """Employee relation: 4 worlds; FD (name, job_title) -> (division)."""
    rel = relation(EMP_SCHEMA, [
        ["jim", [("instructor", 0.7), ("manager", 0.3)], "training", "MBA"],
        ["jim", "manager", "marketing", "MBA"],
        [[("jim", 0.5), ("jill", 0.5)], "consultant", "innovation", "PhD"],
    ])
    cs = emp_constraints("FD (name, job_title) -> (division)\n")
    return rel, cs


@pytest.fixture
def fig1_variant():
    """The modified second tuple (uncertain division): lambda = 0.15."""
    rel = relation(EMP_SCHEMA, [
        ["jim", [("instructor", 0.7), ("manager", 0.3)], "training", "MBA"],
        ["jim", "manager", [("marketing", 0.5), ("training", 0.5)], "MBA"],
        [[("jim", 0.5), ("jill", 0.5)], "consultant", "innovation", "PhD"],
    ])
    cs = emp_constraints("FD (name, job_title) -> (division)\n")
    return rel, cs


FOUR_YEAR_DEGREES = {"BA", "MBA", "PhD", "MSc"}


@pytest.fixture
def fig5():
    """Relation with one IC per level; degreelevel is a table predicate."""
    rel = relation([("name", "string"), ("job_title", "string"),
                    ("division", "string"), ("deg", "string")], [
        ["jim", [("instructor", 0.7), ("manager", 0.3)], "training",
         [("BA", 0.2), ("MBA", 0.8)]],
        ["jim", "manager", "marketing", "MBA"],
        [[("jill", 0.5), ("jim", 0.5)], "consultant", "innovation",
         [("AAB", 0.4), ("PhD", 0.6)]],
    ])
    schema = rel.schema
    text = ("CHECK ATTR deg : degreelevel(deg)\n"
            "CHECK TUPLE (division, deg) : division = 'training' IMPLIES deg IN ('MBA', 'PhD')\n"
            "FD (name, job_title) -> (division)\n")
    cs = parse_constraints(text, schema,
                           predicates={"degreelevel": lambda v: v in FOUR_YEAR_DEGREES})
    return rel, cs


@pytest.fixture
def sample_utuple():
    """Single tuple with no exact sub-tuple: Pc = 0.58."""
    rel = relation(EMP_SCHEMA, [
        ["jim", "instructor", [("training", 0.6), ("marketing", 0.4)],
         [("BA", 0.7), ("MBA", 0.3)]],
    ])
    cs = emp_constraints(
        "CHECK TUPLE (division, degree) : division = 'training' IMPLIES degree = 'MBA'\n")
    return rel, cs


@pytest.fixture
def an_example():
    """Three-tuple relation with an FD and a COUNT aggregation."""
    rel = relation([("name", "string"), ("job_title", "string"), ("division", "string")], [
        ["jim", [("instructor", 0.5), ("consultant", 0.5)], "marketing"],
        ["jim", [("instructor", 0.3), ("manager", 0.7)], "training"],
        ["jim", "instructor", "training"],
    ])
    text = ("FD (name, job_title) -> (division)\n"
            "AGG GROUP BY (name, job_title) COUNT < 2\n")
    cs = parse_constraints(text, rel.schema)
    return rel, cs
