"""Synthetic uncertain-relation generator.

Three stages: build a clean certain relation that satisfies a generated
constraint set by construction, then dirty an alpha fraction of the cells
with extra choices (the clean value always stays, with the highest
probability, so a consistent world with positive mass is guaranteed), and
spend a violation_rate share of the dirt budget on constructed violations
(for example, a realizable FD conflict pair) so that inconsistency really
appears.

Output is deterministic per (config, seed), down to the emitted bytes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .constraints import (AggCount, AggExp, And, AttrRef, Comparison, Constraint,
                          ConstraintSet, ExternalRelation, FD, Implies, IND, Literal,
                          Membership, Not, SetConstraint, TupleCheck)
from .errors import ConfigError
from .model import (AttributeValue, AttributeWorld, Schema, UncertainRelation,
                    UncertainTuple, WorldAssignment, value_sort_key)

DEFAULT_IC_MIX = {"fd": 0.4, "tuple_check": 0.2, "agg_count": 0.2, "ind": 0.1, "set": 0.1}


@dataclass(frozen=True)
class GeneratorConfig:
    attrs: int = 5
    max_choices: int = 3
    num_ics: int = 5
    max_arity: int = 2
    num_tuples: int = 20
    alpha: float = 0.2
    violation_rate: float | None = None  # defaults to alpha
    seed: int = 0
    ic_mix: dict = field(default_factory=lambda: dict(DEFAULT_IC_MIX))

    def __post_init__(self):
        if self.attrs < 1 or self.num_tuples < 1 or self.max_choices < 1:
            raise ConfigError("attrs, num_tuples and max_choices must be >= 1")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError("alpha must be in [0, 1]")
        if self.violation_rate is not None and not (0.0 <= self.violation_rate <= 1.0):
            raise ConfigError("violation_rate must be in [0, 1]")
        if self.max_arity > self.attrs:
            raise ConfigError("max_arity cannot exceed the attribute count")
        bad = set(self.ic_mix) - {"fd", "tuple_check", "agg_count", "agg_exp", "ind", "set"}
        if bad:
            raise ConfigError(f"unknown ic families {sorted(bad)}")


@dataclass
class GeneratedInstance:
    relation: UncertainRelation
    constraints: ConstraintSet
    externals: dict[str, ExternalRelation]
    clean_values: list[tuple]  # ground truth, one value tuple per relation row

    def clean_world(self) -> WorldAssignment:
        picks = []
        for i, t in enumerate(self.relation.tuples):
            row = []
            for j, cell in enumerate(t.cells):
                row.append(cell.values.index(self.clean_values[i][j]))
            picks.append(tuple(row))
        return WorldAssignment(tuple(picks))


def _family_counts(cfg: GeneratorConfig) -> list[str]:
    mix = cfg.ic_mix
    total = sum(mix.values())
    if total <= 0:
        raise ConfigError("ic_mix weights must sum to a positive value")
    exact = {fam: cfg.num_ics * w / total for fam, w in sorted(mix.items())}
    counts = {fam: int(math.floor(x)) for fam, x in exact.items()}
    short = cfg.num_ics - sum(counts.values())
    for fam, _ in sorted(exact.items(), key=lambda kv: (-(kv[1] - math.floor(kv[1])), kv[0])):
        if short <= 0:
            break
        counts[fam] += 1
        short -= 1
    out = []
    for fam in sorted(counts):
        out.extend([fam] * counts[fam])
    return out


def generate(cfg: GeneratorConfig) -> GeneratedInstance:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(7,)))
    n_str = max(1, cfg.attrs - max(1, cfg.attrs // 3))
    kinds = ["string"] * n_str + ["int"] * (cfg.attrs - n_str)
    names = [f"a{j}" for j in range(cfg.attrs)]
    schema = Schema(tuple(zip(names, kinds)))
    # Small relations share a tight vocabulary so grouping collisions (and
    # hence fixable violations) actually occur. Large relations get a wide
    # one and unique clean values per attribute: benign uncertainty must not
    # collide into key conflicts everywhere, or the consistent mass of the
    # whole relation collapses to zero and nothing is approximable.
    wide = cfg.num_tuples > 24
    if wide:
        vocab_n = 4 * cfg.num_tuples
    else:
        vocab_n = max(2, min(6, cfg.num_tuples))
    vocab = {j: ([f"{names[j]}_v{v}" for v in range(vocab_n)] if kinds[j] == "string"
                 else list(range(vocab_n)))
             for j in range(cfg.attrs)}

    if wide:
        clean = []
        columns = [rng.choice(vocab_n, size=cfg.num_tuples, replace=False)
                   for _ in range(cfg.attrs)]
        for i in range(cfg.num_tuples):
            clean.append([vocab[j][int(columns[j][i])] for j in range(cfg.attrs)])
    else:
        clean = [[vocab[j][int(rng.integers(0, vocab_n))] for j in range(cfg.attrs)]
                 for _ in range(cfg.num_tuples)]

    plan = _ConstraintPlan(cfg, rng, schema, vocab, clean, wide)
    bodies, externals = plan.build()
    clean_rows = [tuple(r) for r in clean]

    constraints = ConstraintSet(schema, tuple(Constraint(f"ic{k + 1}", b)
                                              for k, b in enumerate(bodies)), externals)
    _assert_clean_consistent(schema, clean_rows, constraints)

    cells = _dirty_cells(cfg, rng, plan, clean)
    tuples = []
    for i in range(cfg.num_tuples):
        row_cells = []
        for j in range(cfg.attrs):
            extras = cells.get((i, j), ())
            if not extras:
                row_cells.append(AttributeWorld((AttributeValue(clean[i][j], 1.0),), kinds[j]))
            else:
                p_clean = float(np.round(rng.uniform(0.55, 0.85), 3))
                share = (1.0 - p_clean) / len(extras)
                choices = [AttributeValue(clean[i][j], p_clean)]
                choices.extend(AttributeValue(v, share) for v in extras)
                row_cells.append(AttributeWorld(tuple(choices), kinds[j]))
        tuples.append(UncertainTuple(tuple(row_cells), tuple_id=i))
    rel = UncertainRelation(schema, tuple(tuples))
    return GeneratedInstance(rel, constraints, externals, clean_rows)


def _assert_clean_consistent(schema, clean_rows, constraints):
    from .constraints import _values_satisfy
    if not _values_satisfy(constraints, clean_rows):
        raise ConfigError("internal: generated clean relation violates its constraints")


class _ConstraintPlan:
    """Builds satisfiable-by-construction constraints plus violation recipes."""

    def __init__(self, cfg, rng, schema: Schema, vocab, clean, wide: bool = False):
        self.cfg = cfg
        self.rng = rng
        self.schema = schema
        self.vocab = vocab
        self.clean = clean
        self.wide = wide
        self.recipes = []  # callables that dirty cells to create a possible violation
        self.externals: dict[str, ExternalRelation] = {}

    def build(self):
        families = _family_counts(self.cfg)
        fd_count = families.count("fd")
        # Pre-allocate FD dependent attributes and enforce them in ascending
        # index order so no FD ever rewrites another FD's determining values:
        # lhs attributes are never any FD's rhs and rhs values flow upward.
        rhs_pool = list(range(1, self.cfg.attrs))
        self.rng.shuffle(rhs_pool)
        fd_rhs = sorted(rhs_pool[:fd_count])
        bodies = []
        for rhs in fd_rhs:
            bodies.append(self._make_fd(rhs, set(fd_rhs)))
        for fam in families:
            if fam == "fd":
                continue
            b = getattr(self, f"_make_{fam}")()
            if b is None:  # family impossible under this config: fall back
                b = self._make_agg_count()
            if b is not None:
                bodies.append(b)
        while len(bodies) < self.cfg.num_ics:
            bodies.append(self._make_agg_count())
        return bodies, self.externals

    # each _make_* returns a constraint body consistent with the clean data
    # and registers a recipe injecting a realizable violation of it.

    def _make_fd(self, rhs: int, all_rhs: set[int]):
        # lhs attributes sit below the rhs index; enforcement runs in
        # ascending rhs order, so determining values are always final
        lhs_pool = list(range(0, rhs))
        n_lhs = min(len(lhs_pool), int(self.rng.integers(1, 3)))
        lhs = sorted(int(x) for x in self.rng.choice(lhs_pool, size=n_lhs, replace=False))
        if self.wide:
            # injective key -> value assignment keeps per-attribute values
            # unique, so dependent-value uncertainty cannot chain into
            # accidental conflicts downstream
            keys = sorted({tuple(row[j] for j in lhs) for row in self.clean},
                          key=lambda k: tuple(value_sort_key(v) for v in k))
            mapping = {k: self.vocab[rhs][i] for i, k in enumerate(keys)}
            for row in self.clean:
                row[rhs] = mapping[tuple(row[j] for j in lhs)]
        else:
            for row in self.clean:
                key = tuple(row[j] for j in lhs)
                h = hash_stable((key, rhs, "fd"))
                row[rhs] = self.vocab[rhs][h % len(self.vocab[rhs])]
        names = self.schema.names

        def recipe(dirty):
            if len(self.clean) < 2:
                return False
            rows = self.rng.permutation(len(self.clean))
            t1, t2 = int(rows[0]), int(rows[1])
            # make t2's lhs able to match t1's, and its rhs able to differ
            for j in lhs:
                if self.clean[t2][j] != self.clean[t1][j]:
                    dirty.add_choice(t2, j, self.clean[t1][j])
            if self.clean[t2][rhs] == self.clean[t1][rhs]:
                alt = _other_value(self.vocab[rhs], self.clean[t1][rhs], self.rng)
                dirty.add_choice(t2, rhs, alt)
            return True

        self.recipes.append(recipe)
        return FD(tuple(names[j] for j in lhs), (names[rhs],))

    def _make_tuple_check(self):
        A = self.cfg.attrs
        if A < 2 or self.cfg.max_arity < 2:
            return None
        attrs = sorted(int(x) for x in self.rng.choice(A, size=2, replace=False))
        ja, jb = attrs
        present = {(row[ja], row[jb]) for row in self.clean}
        combo = None
        for _ in range(64):  # expected O(1): present covers few of the pairs
            cand = (self.vocab[ja][int(self.rng.integers(0, len(self.vocab[ja])))],
                    self.vocab[jb][int(self.rng.integers(0, len(self.vocab[jb])))])
            if cand not in present:
                combo = cand
                break
        if combo is None:
            return None
        va, vb = combo
        names = self.schema.names
        body = TupleCheck((names[ja], names[jb]),
                          Not(And((Comparison(AttrRef(names[ja]), "=", Literal(va)),
                                   Comparison(AttrRef(names[jb]), "=", Literal(vb))))))

        def recipe(dirty):
            t = int(self.rng.integers(0, len(self.clean)))
            if self.clean[t][ja] != va:
                dirty.add_choice(t, ja, va)
            if self.clean[t][jb] != vb:
                dirty.add_choice(t, jb, vb)
            return True

        self.recipes.append(recipe)
        return body

    def _make_agg_count(self):
        A = self.cfg.attrs
        jg = int(self.rng.integers(0, A))
        counts: dict = {}
        for row in self.clean:
            counts[row[jg]] = counts.get(row[jg], 0) + 1
        gmax = max(counts.values())
        # the wide regime leaves headroom so isolated benign collisions
        # cannot violate the bound; violations take a constructed pile-up
        bound = gmax + (2 if self.wide else 1)
        names = self.schema.names

        def recipe(dirty):
            big_key = max(counts, key=lambda k: (counts[k], repr(k)))
            others = [i for i in range(len(self.clean)) if self.clean[i][jg] != big_key]
            needed = bound - counts[big_key]
            if len(others) < needed or needed <= 0:
                return False
            picks = self.rng.choice(len(others), size=needed, replace=False)
            for t in picks:
                dirty.add_choice(int(others[int(t)]), jg, big_key)
            return True

        self.recipes.append(recipe)
        return AggCount((names[jg],), bound)

    def _make_agg_exp(self):
        numeric = [j for j, k in enumerate(self.schema.kinds) if k in ("int", "float")]
        if not numeric:
            return None
        jb = int(self.rng.choice(numeric))
        jg = int(self.rng.integers(0, self.cfg.attrs))
        if jg == jb:
            jg = (jb + 1) % self.cfg.attrs
        groups: dict = {}
        for row in self.clean:
            groups.setdefault(row[jg], []).append(row[jb])
        # headroom over any single benign swing in the wide regime
        margin = (2 * max(self.vocab[jb]) + 1) if self.wide else 1
        bound = max(sum(vs) for vs in groups.values()) + margin
        names = self.schema.names
        big = (max(self.vocab[jb]) + bound) * (len(self.clean) + 1)

        def recipe(dirty):
            t = int(self.rng.integers(0, len(self.clean)))
            dirty.add_choice(t, jb, big)
            return True

        self.recipes.append(recipe)
        return AggExp((names[jg],), "SUM", names[jb], "<=", float(bound))

    def _make_ind(self):
        strings = [j for j, k in enumerate(self.schema.kinds) if k == "string"]
        if not strings:
            return None
        j = int(self.rng.choice(strings))
        name = f"ext_ind_{len(self.externals)}"
        rows = tuple((v,) for v in self.vocab[j])
        self.externals[name] = ExternalRelation(name, ("val",), rows)
        names = self.schema.names
        novel = f"{names[j]}_missing"

        def recipe(dirty):
            t = int(self.rng.integers(0, len(self.clean)))
            dirty.add_choice(t, j, novel)
            return True

        self.recipes.append(recipe)
        return IND((names[j],), name, ("val",))

    def _make_set(self):
        strings = [j for j, k in enumerate(self.schema.kinds) if k == "string"]
        if len(strings) < 2:
            return None
        j, jc = (int(x) for x in self.rng.choice(strings, size=2, replace=False))
        cond_val = self.clean[int(self.rng.integers(0, len(self.clean)))][jc]
        name = f"ext_set_{len(self.externals)}"
        rows = tuple((v,) for v in self.vocab[j])
        self.externals[name] = ExternalRelation(name, ("val",), rows)
        names = self.schema.names
        novel = f"{names[j]}_outside"

        def recipe(dirty):
            hosts = [i for i in range(len(self.clean)) if self.clean[i][jc] == cond_val]
            if not hosts:
                return False
            t = int(self.rng.choice(hosts))
            dirty.add_choice(t, j, novel)
            return True

        self.recipes.append(recipe)
        return SetConstraint(names[j], Comparison(AttrRef(names[jc]), "=", Literal(cond_val)),
                             name, "val")


class _DirtyCells:
    """Tracks extra choices per cell against the dirt budget."""

    def __init__(self, cfg: GeneratorConfig, rng, clean, vocab, wide: bool = False):
        self.cfg = cfg
        self.rng = rng
        self.clean = clean
        self.vocab = vocab
        self.extra: dict[tuple[int, int], list] = {}
        if wide:
            # benign uncertainty draws from values no tuple uses cleanly, so
            # it can never collide into a key/group/membership conflict;
            # conflicts come only from the explicit violation recipes
            self.benign_pool = {}
            for j, pool in vocab.items():
                used = {row[j] for row in clean}
                self.benign_pool[j] = [v for v in pool if v not in used]
        else:
            self.benign_pool = dict(vocab)

    def add_choice(self, i: int, j: int, value) -> None:
        cur = self.extra.setdefault((i, j), [])
        if value != self.clean[i][j] and value not in cur \
                and len(cur) < self.cfg.max_choices - 1:
            cur.append(value)

    def benign_fill(self, budget: int) -> None:
        if self.cfg.max_choices < 2:
            return
        all_cells = [(i, j) for i in range(len(self.clean)) for j in range(self.cfg.attrs)]
        order = self.rng.permutation(len(all_cells))
        for idx in order:
            if len(self.extra) >= budget:
                return
            i, j = all_cells[int(idx)]
            if (i, j) in self.extra:
                continue
            n_extra = int(self.rng.integers(1, self.cfg.max_choices))
            pool = self.benign_pool[j]
            if not pool:
                continue
            picked = 0
            for _ in range(8 * n_extra):  # rejection sampling beats shuffling wide vocabularies
                v = pool[int(self.rng.integers(0, len(pool)))]
                if v != self.clean[i][j]:
                    self.add_choice(i, j, v)
                    picked += 1
                    if picked >= n_extra:
                        break


def _dirty_cells(cfg: GeneratorConfig, rng, plan: _ConstraintPlan, clean) -> dict:
    budget = math.ceil(cfg.alpha * cfg.num_tuples * cfg.attrs)
    if budget == 0 or cfg.max_choices < 2:
        return {}
    dirty = _DirtyCells(cfg, rng, clean, plan.vocab, plan.wide)
    vrate = cfg.alpha if cfg.violation_rate is None else cfg.violation_rate
    target_violation_cells = round(vrate * budget)
    if plan.recipes and target_violation_cells > 0:
        order = list(rng.permutation(len(plan.recipes)))
        k = 0
        while len(dirty.extra) < min(target_violation_cells, budget):
            recipe = plan.recipes[order[k % len(order)]]
            before = len(dirty.extra)
            recipe(dirty)
            k += 1
            if k > 4 * len(order) and len(dirty.extra) == before:
                break  # no recipe can consume more budget
    dirty.benign_fill(budget)
    # trim overshoot deterministically (a recipe may have dirtied 2 cells at once)
    while len(dirty.extra) > budget:
        key = sorted(dirty.extra)[-1]
        del dirty.extra[key]
    return {k: tuple(v) for k, v in dirty.extra.items()}


def _other_value(pool, not_this, rng):
    options = [v for v in pool if v != not_this]
    return options[int(rng.integers(0, len(options)))] if options else not_this


def hash_stable(obj) -> int:
    import zlib
    return zlib.crc32(repr(obj).encode())
