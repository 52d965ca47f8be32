"""Sampling machinery: Hoeffding-sized naive MC marginals, block-ratio
estimation of consistent mass, and Karp-Luby union (DNF) mass estimation.

Determinism contract: identical (input, master_seed, workers) produce
bit-identical estimates. Work is partitioned into per-worker substreams
derived from (master_seed, estimator salt, stream index) and merged in
stream order, independent of any actual parallelism.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .constraints import (AttributeCheck, ConsistencyChecker, ConstraintSet, TupleCheck,
                          check_attribute, violating_combinations)
from .errors import ConfigError
from .model import UncertainRelation, UncertainTuple
from .views import RelationView

_SALT_ATTR = 101
_SALT_INSTANCE = 102
_SALT_BLOCK = 103
_SALT_KL = 104


@dataclass(frozen=True)
class SamplerConfig:
    master_seed: int = 0
    samples: int | None = None  # explicit S; derived from (error_t, confidence) when None
    error_t: float = 0.05
    confidence: float = 0.9
    block_free_cells: int = 10  # free cross-product bound is 2**block_free_cells
    workers: int = 1

    def __post_init__(self):
        if not (0.0 < self.error_t < 1.0):
            raise ConfigError(f"error_t {self.error_t} not in (0,1)")
        if not (0.0 < self.confidence < 1.0):
            raise ConfigError(f"confidence {self.confidence} not in (0,1)")
        if self.samples is not None and self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def sample_count(self, value_range: float = 1.0) -> int:
        if self.samples is not None:
            return self.samples
        return required_samples(self.error_t, self.confidence, value_range=value_range)


def required_samples(error_t: float, confidence: float, two_sided: bool = False,
                     value_range: float = 1.0) -> int:
    """Smallest n with exp(-2 n t^2 / range^2) <= 1 - confidence.

    The default range of 1 fits variables bounded in [0,1] (ratios and
    probabilities); pass the actual spread for wider-ranged estimators.
    """
    delta = 1.0 - confidence
    if two_sided:
        delta /= 2.0
    if delta >= 1.0:
        return 1
    n = math.log(1.0 / delta) * value_range ** 2 / (2.0 * error_t ** 2)
    return max(1, math.ceil(n))


def _stream_sizes(total: int, workers: int) -> list[int]:
    base, extra = divmod(total, workers)
    return [base + (1 if w < extra else 0) for w in range(workers)]


def _rng(cfg: SamplerConfig, salt: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.master_seed, spawn_key=(salt, stream)))


def _categorical(rng: np.random.Generator, cum: np.ndarray, size: int) -> np.ndarray:
    return np.searchsorted(cum, rng.random(size), side="right").astype(np.int64)


# ---------------------------------------------------------------------------
# Attribute marginals (tuple scope)

@dataclass(frozen=True)
class MarginalTable:
    """Estimated consistency-restricted mass per (attribute slot, choice index)."""

    values: dict[tuple[int, int], float]
    samples: int
    seed: int

    def get(self, attr: int, choice: int) -> float:
        return self.values.get((attr, choice), 0.0)


def tuple_cross_product_size(t: UncertainTuple, retained: Sequence[frozenset[int]] | None = None) -> int:
    k = 1
    for j, cell in enumerate(t.cells):
        k *= len(retained[j]) if retained is not None else len(cell)
    return k


def exact_tuple_marginals(t: UncertainTuple, cs: ConstraintSet,
                          retained: Sequence[frozenset[int]] | None = None) -> MarginalTable:
    """Tuple-local exact marginals by direct enumeration (small cross-products)."""
    options = [sorted(retained[j]) if retained is not None else list(range(len(c)))
               for j, c in enumerate(t.cells)]
    ok_cells = _attribute_ok_masks(t, cs, options)
    bad = _violating_codes(t, cs, options)
    out: dict[tuple[int, int], float] = {}
    for combo in itertools.product(*[range(len(o)) for o in options]):
        if not all(ok[c] for ok, c in zip(ok_cells, combo)):
            continue
        if any(tuple(combo[pos] for pos in positions) in codes for positions, codes in bad):
            continue
        p = 1.0
        for j, c in enumerate(combo):
            p *= t.cells[j].choices[options[j][c]].prob
        for j, c in enumerate(combo):
            key = (j, options[j][c])
            out[key] = out.get(key, 0.0) + p
    return MarginalTable(out, samples=0, seed=0)


def _attribute_ok_masks(t, cs, options):
    masks = []
    for j, opts in enumerate(options):
        ok = [True] * len(opts)
        for c in cs.attribute_level:
            if cs.info(c)["slots"][0] != j:
                continue
            for k, o in enumerate(opts):
                if ok[k] and not check_attribute(cs, c, t.cells[j].choices[o].value):
                    ok[k] = False
        masks.append(ok)
    return masks


def _violating_codes(t, cs, options):
    """Per tuple check: (its attribute slots, violating local-option combos)."""
    out = []
    retained = [frozenset(o) for o in options]
    for c in cs.tuple_level:
        slots = cs.info(c)["slots"]
        combos = violating_combinations(cs, c, t, retained)
        local = {tuple(options[j].index(pick) for j, pick in zip(slots, combo))
                 for combo in combos}
        out.append((tuple(slots), local))
    return out


def mc_attribute_marginals(t: UncertainTuple, cs: ConstraintSet, cfg: SamplerConfig,
                           retained: Sequence[frozenset[int]] | None = None) -> MarginalTable:
    """Unbiased MC estimate of tuple-local consistency-restricted marginals.

    Instances are sampled uniformly from the cross-product, weighted by
    their probability when consistent with the tuple's attribute and tuple
    level checks, then scaled by the cross-product size.
    """
    options = [sorted(retained[j]) if retained is not None else list(range(len(c)))
               for j, c in enumerate(t.cells)]
    k_total = 1
    for o in options:
        k_total *= len(o)
    ok_cells = [np.asarray(m, dtype=bool) for m in _attribute_ok_masks(t, cs, options)]
    bad = _violating_codes(t, cs, options)
    probs = [np.asarray([t.cells[j].choices[o].prob for o in opts]) for j, opts in enumerate(options)]

    total = cfg.sample_count()
    sums: dict[tuple[int, int], list[float]] = {}
    partials = []
    for stream, size in enumerate(_stream_sizes(total, cfg.workers)):
        if size == 0:
            partials.append({})
            continue
        rng = _rng(cfg, _SALT_ATTR, stream)
        draws = [rng.integers(0, len(o), size=size) for o in options]
        weight = np.ones(size, dtype=np.float64) * k_total
        mask = np.ones(size, dtype=bool)
        for j in range(len(options)):
            weight *= probs[j][draws[j]]
            mask &= ok_cells[j][draws[j]]
        for slots, combos in bad:
            if not combos:
                continue
            radix = np.zeros(size, dtype=np.int64)
            mult = 1
            for j in reversed(slots):
                radix += draws[j] * mult
                mult *= len(options[j])
            bad_codes = np.asarray(sorted(
                _encode(combo, [len(options[j]) for j in slots]) for combo in combos), dtype=np.int64)
            mask &= ~np.isin(radix, bad_codes)
        weight = np.where(mask, weight, 0.0)
        part: dict[tuple[int, int], float] = {}
        for j, opts in enumerate(options):
            acc = np.bincount(draws[j], weights=weight, minlength=len(opts))
            for k, o in enumerate(opts):
                if acc[k]:
                    part[(j, o)] = float(acc[k])
        partials.append(part)
    out: dict[tuple[int, int], float] = {}
    for part in partials:
        for key, v in part.items():
            out[key] = out.get(key, 0.0) + v
    return MarginalTable({k: v / total for k, v in out.items()},
                         samples=total, seed=cfg.master_seed)


def draws_pos(draws, options, j):
    return draws[j]


def _encode(combo: Sequence[int], radices: Sequence[int]) -> int:
    code = 0
    for c, r in zip(combo, radices):
        code = code * r + c
    return code


# ---------------------------------------------------------------------------
# Tuple instance marginals (relation scope, naive world sampling)

def mc_tuple_instance_marginals(rel_or_view, cs: ConstraintSet, cfg: SamplerConfig,
                                targets: Sequence[tuple[int, tuple[int, ...], tuple]]
                                ) -> dict[tuple[int, tuple[int, ...], tuple], float]:
    """Naive-MC relation-instance sampling.

    Each target is (tuple index, attribute slots, projected values); the
    estimate converges to the exact consistency-restricted instance
    marginal. Weights are K * P_I(world) for uniformly drawn worlds, with K
    the total world count, computed in log space.
    """
    view = rel_or_view if isinstance(rel_or_view, RelationView) else \
        RelationView.from_relation(rel_or_view)
    checker = ConsistencyChecker(view, cs)
    cells = view.uncertain_cells()
    options = {(i, j): view.retained_union(i, j) for (i, j) in cells}
    log_k = math.fsum(math.log(len(options[c])) for c in cells)
    probs = {(i, j): np.asarray([view.probs_of(i, j)[c] for c in options[(i, j)]])
             for (i, j) in cells}
    dyn_tuples = sorted({i for (i, j) in cells})
    base_values = {i: list(view.certain_values(i)) for i in dyn_tuples}
    by_target: dict = {t: 0.0 for t in targets}
    total = cfg.sample_count()
    for stream, size in enumerate(_stream_sizes(total, cfg.workers)):
        if size == 0:
            continue
        rng = _rng(cfg, _SALT_INSTANCE, stream)
        draws = {c: rng.integers(0, len(options[c]), size=size) for c in cells}
        for s in range(size):
            logw = log_k
            values_by_tuple = {}
            for i in dyn_tuples:
                vals = base_values[i][:]
                values_by_tuple[i] = vals
            for (i, j) in cells:
                pick = options[(i, j)][draws[(i, j)][s]]
                values_by_tuple[i][j] = view.values_of(i, j)[pick]
                logw += math.log(view.probs_of(i, j)[pick])
            if not checker.world_ok(values_by_tuple):
                continue
            w = math.exp(logw)
            for tgt in targets:
                i, slots, vals = tgt
                realized = values_by_tuple.get(i)
                if realized is None:
                    realized = view.certain_values(i)
                if tuple(realized[j] for j in slots) == tuple(vals):
                    by_target[tgt] += w
    return {t: v / total for t, v in by_target.items()}


# ---------------------------------------------------------------------------
# Block-ratio estimation of consistent mass

@dataclass(frozen=True)
class BlockEstimate:
    """AvgR over sampled blocks and the masses derived from it."""

    avg_r: float
    total_mass: float
    n_blocks: int
    seed: int
    error_t: float
    confidence: float

    @property
    def consistent_mass(self) -> float:
        return self.total_mass * self.avg_r

    @property
    def inconsistent_mass(self) -> float:
        return self.total_mass * (1.0 - self.avg_r)


def block_avg_ratio(rel_or_view, cs: ConstraintSet, cfg: SamplerConfig) -> BlockEstimate:
    """Estimate the ratio R of consistent to total mass by sampling blocks.

    A block fixes every uncertain cell except a small free set (per-tuple
    row chosen proportionally to row mass, fixed picks drawn from the
    retained distribution) and enumerates the free cross-product
    exhaustively; R_B is exact within the block and AvgR is their mean,
    an unbiased estimator of consistent/total mass.
    """
    view = rel_or_view if isinstance(rel_or_view, RelationView) else \
        RelationView.from_relation(rel_or_view) if isinstance(rel_or_view, UncertainRelation) else \
        RelationView.from_subrelation(rel_or_view)
    checker = ConsistencyChecker(view, cs)
    n_blocks = required_samples(cfg.error_t, cfg.confidence)
    bound = 2 ** cfg.block_free_cells
    total_mass = view.total_mass()
    if checker.always_false:
        return BlockEstimate(0.0, total_mass, n_blocks, cfg.master_seed,
                             cfg.error_t, cfg.confidence)

    # per-tuple row selection data
    row_cum: dict[int, np.ndarray] = {}
    for i in range(view.n):
        if len(view.rows[i]) > 1:
            masses = []
            for row in view.rows[i]:
                m = 1.0
                for j, a in enumerate(row):
                    probs = view.probs_of(i, j)
                    m *= math.fsum(probs[c] for c in a)
                masses.append(m)
            arr = np.asarray(masses)
            row_cum[i] = np.cumsum(arr / arr.sum())

    dyn_tuples = sorted({i for h in checker.handlers for i in h.dynamic})
    base_values = {i: list(view.certain_values(i)) for i in dyn_tuples}

    stream_ratio_sums = []
    for stream, size in enumerate(_stream_sizes(n_blocks, cfg.workers)):
        rng = _rng(cfg, _SALT_BLOCK, stream)
        ratios = []
        for _ in range(size):
            rows_pick = {i: int(np.searchsorted(row_cum[i], rng.random(), side="right"))
                         for i in row_cum}
            # uncertain cells under the chosen rows
            cells = []
            for i in dyn_tuples:
                row = view.rows[i][rows_pick.get(i, 0)]
                for j in range(view.s):
                    if len(row[j]) > 1:
                        cells.append((i, j, row[j]))
            order = rng.permutation(len(cells))
            free, prod = [], 1
            for idx in order:
                i, j, opts = cells[idx]
                if prod * len(opts) > bound:
                    continue
                prod *= len(opts)
                free.append(cells[idx])
                if prod >= bound:
                    break
            free_keys = {(i, j) for i, j, _ in free}
            # materialize fixed values
            values_by_tuple: dict[int, list] = {}
            for i in dyn_tuples:
                vals = base_values[i][:]
                row = view.rows[i][rows_pick.get(i, 0)]
                for j in range(view.s):
                    opts = row[j]
                    if len(opts) == 1:
                        vals[j] = view.values_of(i, j)[opts[0]]
                    elif (i, j) not in free_keys:
                        probs = np.asarray([view.probs_of(i, j)[c] for c in opts])
                        cum = np.cumsum(probs / probs.sum())
                        pick = opts[int(np.searchsorted(cum, rng.random(), side="right"))]
                        vals[j] = view.values_of(i, j)[pick]
                values_by_tuple[i] = vals
            eval_values = {i: values_by_tuple[i] for i, _, _ in free}
            plan = checker.start_block(values_by_tuple, eval_values)
            if plan is None:
                ratios.append(0.0)
                continue
            cons = tot = 0.0
            free_opts = [(values_by_tuple[i], j, [view.probs_of(i, j)[c] for c in opts],
                          [view.values_of(i, j)[c] for c in opts])
                         for i, j, opts in free]
            for combo in itertools.product(*[range(len(o[2])) for o in free_opts]):
                relmass = 1.0
                for (vals, j, probs, vlist), c in zip(free_opts, combo):
                    vals[j] = vlist[c]
                    relmass *= probs[c]
                tot += relmass
                if checker.block_world_ok(plan):
                    cons += relmass
            ratios.append(cons / tot if tot > 0 else 0.0)
        stream_ratio_sums.append(math.fsum(ratios))
    avg_r = math.fsum(stream_ratio_sums) / n_blocks
    return BlockEstimate(avg_r, total_mass, n_blocks, cfg.master_seed,
                         cfg.error_t, cfg.confidence)


# ---------------------------------------------------------------------------
# Karp-Luby union mass

def sampled_quality(rel: UncertainRelation, cs: ConstraintSet, sub, cfg: SamplerConfig):
    """Block-sampled quality report for a sub-relation (cr/pc - ir)."""
    from .errors import FullyInconsistentError
    from .model import QualityReport
    base_est = block_avg_ratio(RelationView.from_relation(rel), cs, cfg)
    pc = base_est.consistent_mass
    if pc <= 0.0:
        raise FullyInconsistentError("estimated pc = 0: quality undefined")
    sub_est = block_avg_ratio(RelationView.from_subrelation(sub), cs, cfg)
    cr, ir = sub_est.consistent_mass, sub_est.inconsistent_mass
    return QualityReport(pc=min(1.0, pc), cr=cr, ir=ir, quality=cr / pc - ir,
                         method="sampled",
                         metadata={"seed": cfg.master_seed, "n_blocks": base_est.n_blocks,
                                   "error_t": cfg.error_t, "confidence": cfg.confidence,
                                   "workers": cfg.workers})


def karp_luby_union_mass(events: Sequence[tuple[int, int, int]], rel: UncertainRelation,
                         cfg: SamplerConfig) -> float:
    """Unbiased estimate of P(e1 or ... or en) where each event is "a random
    world picks choice c at cell (i, j)".

    Standard union estimator: draw an event with probability p_i / sum(p),
    sample a world conditioned to contain it, count the events the world
    contains, average 1/count and scale by sum(p). Same-cell events are
    mutually exclusive; distinct cells are independent.
    """
    events = list(events)
    if not events:
        return 0.0
    p = np.asarray([rel.cell(i, j).choices[c].prob for i, j, c in events])
    p_sum = float(p.sum())
    cells = sorted({(i, j) for i, j, _ in events})
    cell_idx = {c: k for k, c in enumerate(cells)}
    cum_by_cell = []
    for (i, j) in cells:
        probs = np.asarray(rel.cell(i, j).probs)
        cum_by_cell.append(np.cumsum(probs / probs.sum()))
    ev_cell = np.asarray([cell_idx[(i, j)] for i, j, _ in events])
    ev_choice = np.asarray([c for _, _, c in events])
    ev_cum = np.cumsum(p / p_sum)

    total = cfg.sample_count()
    partials = []
    for stream, size in enumerate(_stream_sizes(total, cfg.workers)):
        if size == 0:
            continue
        rng = _rng(cfg, _SALT_KL, stream)
        chosen = _categorical(rng, ev_cum, size)
        picks = np.empty((size, len(cells)), dtype=np.int64)
        for k in range(len(cells)):
            picks[:, k] = _categorical(rng, cum_by_cell[k], size)
        picks[np.arange(size), ev_cell[chosen]] = ev_choice[chosen]
        counts = np.zeros(size, dtype=np.int64)
        for e in range(len(events)):
            counts += picks[:, ev_cell[e]] == ev_choice[e]
        partials.append(float(np.sum(1.0 / counts)))
    return p_sum * math.fsum(partials) / total
