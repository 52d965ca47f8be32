"""Utility-gated greedy constraint resolution and incremental updates.

Pipeline: attribute checks are factored unconditionally (lossless), then
tuple-level targets and finally relation-level targets are resolved
greedily in descending utility order, stopping when no target has positive
utility. Utility is UT = IC_L - CM_L / Pc: positive utility guarantees a
quality increase when the masses are exact.

Exact mode (small world counts) computes IC_L/CM_L as oracle world-mass
deltas of simulating the step; sampled mode uses local estimates
(tuple-local masses and marginals; class-local violation sampling plus
Karp-Luby union mass for relation targets) with Pc estimated once by block
sampling. Trace Cr/Ir values are exact in exact mode and running
estimates (previous value minus the step's loss estimate) in sampled mode.
"""

from __future__ import annotations

import itertools
import math
import time
import zlib
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .constraints import (AggCount, AggExp, Constraint, ConstraintSet, FD, IND,
                          SetConstraint, agg_satisfied, check_attribute,
                          violating_combinations)
from .errors import (FullyInconsistentError, InfeasibleClassError, OracleTooLargeError,
                     TupleAnnihilatedError)
from .estimation import (SamplerConfig, block_avg_ratio, exact_tuple_marginals,
                         karp_luby_union_mass, mc_attribute_marginals, required_samples)
from .model import Row, SubRelation, UncertainRelation, identity_row
from .multirow import resolve_tuple_multi_row
from .oracle import WorldTable
from .relationfix import (FixPlan, Member, NeedFixClass, class_is_violating, class_slots,
                          fix_class, regenerate_class, simulate_apply_plan,
                          tuple_projections, _key_of, _member_violates)
from .views import RelationView

_LOCAL_ENUM_BOUND = 4096
_SALT_CLASS = 106


@dataclass(frozen=True)
class ResolveConfig:
    mode: str = "greedy"  # greedy | all
    rows: int = 4  # multi-row budget M; 1 = classic single-row
    threshold: float = 0.0  # consistent-mass floor B; 0 disables
    utility_mode: str = "auto"  # auto | exact | sampled
    exact_limit: int = 2 ** 18
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    refresh_pc: bool = False
    full_refresh: bool = False
    agg_exhaustive_bound: int = 20
    hill_climb_restarts: int = 8


@dataclass(frozen=True)
class UtilityRecord:
    target_id: str
    ic_loss: float
    cm_loss: float
    utility: float
    feasible: bool = True


@dataclass(frozen=True)
class TraceStep:
    step: int
    target_id: str
    utility: float
    cr: float
    ir: float
    q: float
    elapsed_ms: float
    dropped: tuple = ()
    skipped: bool = False
    note: str = ""


@dataclass
class ResolutionTrace:
    steps: list[TraceStep]
    termination: str
    pc: float
    gamma: float
    mode: str
    utility_mode: str
    seed: int

    @property
    def skipped_any(self) -> bool:
        return any(s.skipped for s in self.steps)


@dataclass(frozen=True)
class TupleTarget:
    ic_id: str
    tuple_idx: int
    forced_drops: tuple = ()  # optional ((attr, choice), ...) plan override

    @property
    def target_id(self) -> str:
        return f"{self.ic_id}@t{self.tuple_idx}"


@dataclass(frozen=True)
class ClassTarget:
    ic_id: str
    key: tuple

    @property
    def target_id(self) -> str:
        return f"{self.ic_id}@k{self.key!r}"


def _stable_hash(obj) -> int:
    return zlib.crc32(repr(obj).encode())


class _State:
    """Mutable working copy of per-tuple rows."""

    def __init__(self, base: UncertainRelation, rows=None):
        self.base = base
        if rows is None:
            self.rows: list[tuple[Row, ...]] = [(identity_row(t),) for t in base.tuples]
        else:
            self.rows = [tuple(tuple(frozenset(a) for a in row) for row in tr) for tr in rows]
        self.version = 0
        self._view_cache: tuple[int, RelationView] | None = None

    def view(self) -> RelationView:
        if self._view_cache is None or self._view_cache[0] != self.version:
            self._view_cache = (self.version, RelationView(self.base, self.rows))
        return self._view_cache[1]

    def set_rows(self, i: int, rows: Sequence[Row]):
        self.rows[i] = tuple(rows)
        self.version += 1

    def snapshot(self) -> list:
        return list(self.rows)

    def rollback(self, snapshot: list):
        self.rows = list(snapshot)
        self.version += 1  # stays monotonic: cached views must never resurface
        self._view_cache = None

    def subrelation(self, gamma: float) -> SubRelation:
        return SubRelation(self.base, tuple(self.rows), gamma)


# ---------------------------------------------------------------------------
# Local (tuple-scope) mass computations shared by both utility modes

def local_inconsistent_mass(view: RelationView, cs: ConstraintSet, ic: Constraint, i: int) -> float:
    """Mass of tuple i's retained instances violating one tuple-level check."""
    slots = cs.info(ic)["slots"]
    t = view.base.tuples[i]
    total = 0.0
    for row in view.rows[i]:
        retained = tuple(frozenset(a) for a in row)
        for combo in violating_combinations(cs, ic, t, retained):
            m = 1.0
            for j, c in zip(slots, combo):
                m *= view.probs_of(i, j)[c]
            for j in range(view.s):
                if j not in slots:
                    probs = view.probs_of(i, j)
                    m *= math.fsum(probs[c] for c in row[j])
            total += m
    return total


def _local_marginals(view: RelationView, cs_local: ConstraintSet, i: int,
                     sampler: SamplerConfig) -> dict[tuple[int, int], float]:
    """Tuple-local consistency-restricted marginals over the current rows."""
    t = view.base.tuples[i]
    out: dict[tuple[int, int], float] = {}
    for row in view.rows[i]:
        size = 1
        for a in row:
            size *= len(a)
        if size <= _LOCAL_ENUM_BOUND:
            table = exact_tuple_marginals(t, cs_local, row)
        else:
            row_key = tuple(tuple(sorted(a)) for a in row)
            cfg = replace(sampler, master_seed=sampler.master_seed ^ _stable_hash((i, row_key)))
            table = mc_attribute_marginals(t, cs_local, cfg, row)
        for key, v in table.values.items():
            out[key] = out.get(key, 0.0) + v
    return out


def local_consistent_mass(marginals: Mapping[tuple[int, int], float], attr: int = 0) -> float:
    """Every consistent instance contains exactly one choice of any fixed
    attribute, so that attribute's marginals sum to the consistent mass."""
    return math.fsum(v for (j, _), v in marginals.items() if j == attr)


def _member_local_weights(view: RelationView, cs_local: ConstraintSet, cls: NeedFixClass
                          ) -> tuple[dict[Member, float], dict[Member, float]]:
    """(consistency-restricted marginal, raw mass) per member, tuple-locally."""
    marg: dict[Member, float] = {m: 0.0 for m in cls.members}
    raw: dict[Member, float] = {m: 0.0 for m in cls.members}
    by_tuple: dict[int, list[Member]] = {}
    for m in cls.members:
        by_tuple.setdefault(m.tuple_idx, []).append(m)
    local_fns = [cs_local.info(c)["fn"] for c in cs_local.attribute_level + cs_local.tuple_level]
    for i, members in by_tuple.items():
        want = {m.projection: m for m in members}
        for row in view.rows[i]:
            for picks in itertools.product(*row):
                p = 1.0
                vals = []
                for j, c in enumerate(picks):
                    p *= view.probs_of(i, j)[c]
                    vals.append(view.values_of(i, j)[c])
                m = want.get(tuple(vals[j] for j in cls.slots))
                if m is None:
                    continue
                raw[m] += p
                if all(fn(vals) for fn in local_fns):
                    marg[m] += p
    return marg, raw


# ---------------------------------------------------------------------------
# Incrementally maintained NEED-FIX classes per relation IC

class _ClassIndex:
    """NEED-FIX classes of one relation IC, maintained incrementally.

    Holds per-tuple projections and a per-key member index; after a step
    only the touched tuples are re-projected and only their keys get their
    violating status re-checked, so per-step cost is local."""

    def __init__(self, view: RelationView, cs: ConstraintSet, ic: Constraint):
        self.cs = cs
        self.ic = ic
        self.slots = class_slots(cs, ic)
        self.membership = isinstance(ic.body, (IND, SetConstraint))
        self.projs: dict[int, set[tuple]] = {}
        self.by_key: dict[tuple, set[Member]] = {}
        self._violating: set[tuple] = set()
        for i in range(view.n):
            self.projs[i] = ps = tuple_projections(view, i, self.slots)
            for p in ps:
                self.by_key.setdefault(self._key(p), set()).add(Member(i, p))
        for key in list(self.by_key):
            self._recheck(key)

    def _key(self, projection: tuple) -> tuple:
        if self.membership:
            return ()
        return _key_of(self.cs, self.ic, projection)

    def _class_for(self, key: tuple) -> NeedFixClass:
        members = self.by_key.get(key, ())
        if self.membership:
            members = [m for m in members
                       if _member_violates(self.cs, self.ic, m.projection, self.slots)]
        return NeedFixClass(self.ic, key, self.slots,
                            tuple(sorted(members, key=Member.sort_key)))

    def _recheck(self, key: tuple):
        cls = self._class_for(key)
        if cls.members and class_is_violating(self.cs, cls):
            self._violating.add(key)
        else:
            self._violating.discard(key)
            if not self.by_key.get(key):
                self.by_key.pop(key, None)

    def update(self, view: RelationView, tuples: Sequence[int]):
        touched_keys = set()
        for i in tuples:
            old = self.projs.get(i, set())
            new = tuple_projections(view, i, self.slots)
            for p in old - new:
                key = self._key(p)
                members = self.by_key.get(key)
                if members is not None:
                    members.discard(Member(i, p))
                touched_keys.add(key)
            for p in new - old:
                key = self._key(p)
                self.by_key.setdefault(key, set()).add(Member(i, p))
                touched_keys.add(key)
            self.projs[i] = new
        for key in touched_keys:
            self._recheck(key)

    def violating(self) -> list[NeedFixClass]:
        return [self._class_for(key) for key in sorted(self._violating, key=_stable_hash)]


# ---------------------------------------------------------------------------
# The resolver

class _Resolver:
    def __init__(self, rel: UncertainRelation, cs: ConstraintSet, cfg: ResolveConfig,
                 initial_rows=None, target_ics: set[str] | None = None,
                 target_tuples: set[int] | None = None,
                 classes_must_touch: set[int] | None = None):
        self.rel = rel
        self.cs = cs
        self.cfg = cfg
        self.state = _State(rel, initial_rows)
        self.cs_local = cs.local_levels()
        self.target_ics = target_ics
        self.target_tuples = target_tuples
        self.classes_must_touch = classes_must_touch
        self.trace: list[TraceStep] = []
        self.step_no = 0
        self.table: WorldTable | None = None
        self._suppressed: set[tuple[str, tuple]] = set()
        self._marg_cache: dict[int, tuple[int, dict]] = {}
        self._class_util_cache: dict = {}
        self.utility_mode = cfg.utility_mode
        if self.utility_mode == "auto":
            self.utility_mode = "exact" if rel.world_count() <= cfg.exact_limit else "sampled"
        if self.utility_mode == "exact":
            if rel.world_count() > cfg.exact_limit:
                raise OracleTooLargeError(
                    f"{rel.world_count()} worlds exceed exact utility limit {cfg.exact_limit}")
            self.table = WorldTable(RelationView.from_relation(rel), cs, limit=cfg.exact_limit)
            self.pc = self.table.pc
        else:
            est = block_avg_ratio(RelationView.from_relation(rel), cs, cfg.sampler)
            self.pc = est.consistent_mass
        if self.pc <= 0.0:
            raise FullyInconsistentError("no consistent world: gamma undefined, nothing to retain")
        if self.table is not None:
            self.cr, self.ir = self.table.masses(self.state.rows)
        else:
            view = self.state.view()
            total = view.total_mass()
            self.cr = self.pc  # identity start retains all consistent mass
            self.ir = max(0.0, total - self.pc)

    # -- marginals & weights -------------------------------------------------
    def _value_marginals(self, i: int) -> dict[tuple[int, int], float]:
        cached = self._marg_cache.get(i)
        if cached and cached[0] == self.state.version:
            return cached[1]
        if self.table is not None:
            per_instance = self.table.instance_masses(self.state.rows)
            out: dict[tuple[int, int], float] = {}
            picks, _, _ = self.table.spaces[i]
            for k, pk in enumerate(picks):
                w = float(per_instance[i][k])
                if w:
                    for j, c in enumerate(pk):
                        out[(j, c)] = out.get((j, c), 0.0) + w
        else:
            out = _local_marginals(self.state.view(), self.cs_local, i, self.cfg.sampler)
        self._marg_cache[i] = (self.state.version, out)
        return out

    def _member_weights(self, cls: NeedFixClass):
        view = self.state.view()
        if self.table is not None:
            per_instance = self.table.instance_masses(self.state.rows)
            marg: dict[Member, float] = {m: 0.0 for m in cls.members}
            by_tuple: dict[int, list[Member]] = {}
            for m in cls.members:
                by_tuple.setdefault(m.tuple_idx, []).append(m)
            for i, members in by_tuple.items():
                _, values_i, _ = self.table.spaces[i]
                want: dict[tuple, list[Member]] = {}
                for m in members:
                    want.setdefault(m.projection, []).append(m)
                for k, vals in enumerate(values_i):
                    proj = tuple(vals[j] for j in cls.slots)
                    for m in want.get(proj, ()):
                        marg[m] += float(per_instance[i][k])
            _, raw = _member_local_weights(view, self.cs_local, cls)
            return marg, raw
        return _member_local_weights(view, self.cs_local, cls)

    # -- trace -----------------------------------------------------------------
    def _record(self, target_id: str, utility: float, dropped, elapsed_ms: float,
                skipped=False, note=""):
        self.step_no += 1
        q = self.cr / self.pc - self.ir
        self.trace.append(TraceStep(self.step_no, target_id, utility, self.cr, self.ir, q,
                                    elapsed_ms, tuple(dropped), skipped, note))

    # -- attribute phase ------------------------------------------------------
    def _attribute_phase(self):
        ics = self.cs.attribute_level
        if self.target_ics is not None:
            ics = tuple(c for c in ics if c.id in self.target_ics)
        scan = range(self.rel.n) if self.target_tuples is None else sorted(self.target_tuples)
        for ic in ics:
            t0 = time.perf_counter()
            j = self.cs.info(ic)["slots"][0]
            dropped = []
            removed_fracs = []
            skipped_cells = []
            for i in scan:
                cell = self.rel.cell(i, j)
                bad = {c for c in range(len(cell))
                       if not check_attribute(self.cs, ic, cell.choices[c].value)}
                if not bad:
                    continue
                cur = self.state.rows[i]
                new_rows = []
                for row in cur:
                    keep = row[j] - bad
                    if keep:
                        nr = list(row)
                        nr[j] = frozenset(keep)
                        new_rows.append(tuple(nr))
                if not new_rows:
                    skipped_cells.append((i, j))
                    continue
                before = {c for row in cur for c in row[j]}
                after = {c for row in new_rows for c in row[j]}
                gone = before - after
                if gone:
                    removed_fracs.append(math.fsum(cell.probs[c] for c in gone))
                    dropped.extend((i, j, cell.choices[c].value) for c in sorted(gone))
                self.state.set_rows(i, new_rows)
            if not dropped and not skipped_cells:
                continue
            if self.table is not None:
                ir_before = self.ir
                self.cr, self.ir = self.table.masses(self.state.rows)
                ic_l = ir_before - self.ir
            else:
                kept = 1.0
                for f in removed_fracs:
                    kept *= (1.0 - f)
                ic_l = 1.0 - kept  # removals are independent and all inconsistent
                self.ir = max(0.0, self.ir - ic_l)
            elapsed = (time.perf_counter() - t0) * 1000
            note = f"annihilation skipped at cells {skipped_cells}" if skipped_cells else ""
            self._record(ic.id, utility=ic_l, dropped=dropped, elapsed_ms=elapsed,
                         skipped=bool(skipped_cells), note=note)

    # -- tuple phase ------------------------------------------------------------
    def _tuple_targets(self) -> dict[str, TupleTarget]:
        view = self.state.view()
        out: dict[str, TupleTarget] = {}
        ics = self.cs.tuple_level
        if self.target_ics is not None:
            ics = tuple(c for c in ics if c.id in self.target_ics)
        scan = range(self.rel.n) if self.target_tuples is None else sorted(self.target_tuples)
        for ic in ics:
            info = self.cs.info(ic)
            slots, fn = info["slots"], info["fn"]
            for i in scan:
                if not view.tuple_uncertain_on(i, slots):
                    if fn(view.certain_values(i)):
                        continue
                    violating = True
                else:
                    t = self.rel.tuples[i]
                    violating = any(violating_combinations(self.cs, ic, t, row)
                                    for row in view.rows[i])
                if violating:
                    tgt = TupleTarget(ic.id, i)
                    out[tgt.target_id] = tgt
        return out

    def _plan_tuple(self, tgt: TupleTarget):
        """Simulated resolution of one (IC, tuple) target -> (rows, dropped)."""
        ic = self.cs.by_id(tgt.ic_id)
        i = tgt.tuple_idx
        t = self.rel.tuples[i]
        cur = list(self.state.rows[i])
        if tgt.forced_drops:
            new_rows = []
            for row in cur:
                nr = list(row)
                dead = False
                for (j, c) in tgt.forced_drops:
                    nr[j] = frozenset(nr[j] - {c})
                    if not nr[j]:
                        dead = True
                        break
                if not dead:
                    new_rows.append(tuple(nr))
            if not new_rows:
                return None, ()
        else:
            marginals = self._value_marginals(i)
            budget = max(self.cfg.rows, len(cur))
            try:
                new_rows = resolve_tuple_multi_row(self.cs, t, budget, marginals,
                                                   ics=[ic], rows=cur)
            except TupleAnnihilatedError:
                return None, ()
        before = {(j, c) for row in cur for j in range(self.rel.s) for c in row[j]}
        after = {(j, c) for row in new_rows for j in range(self.rel.s) for c in row[j]}
        dropped_values = tuple((i, j, self.rel.cell(i, j).choices[c].value)
                               for (j, c) in sorted(before - after))
        return new_rows, dropped_values

    def _tuple_utility(self, tgt: TupleTarget) -> UtilityRecord:
        ic = self.cs.by_id(tgt.ic_id)
        i = tgt.tuple_idx
        new_rows, _ = self._plan_tuple(tgt)
        if new_rows is None:
            return UtilityRecord(tgt.target_id, 0.0, 0.0, float("-inf"), feasible=False)
        if self.table is not None:
            trial = list(self.state.rows)
            trial[i] = tuple(new_rows)
            cr2, ir2 = self.table.masses(trial)
            return UtilityRecord(tgt.target_id, self.ir - ir2, self.cr - cr2,
                                 (self.ir - ir2) - (self.cr - cr2) / self.pc)
        view = self.state.view()
        ic_l = local_inconsistent_mass(view, self.cs, ic, i)
        before = local_consistent_mass(self._value_marginals(i))
        trial_rows = [tuple(new_rows) if k == i else self.state.rows[k]
                      for k in range(self.rel.n)]
        after_marg = _local_marginals(RelationView(self.rel, trial_rows),
                                      self.cs_local, i, self.cfg.sampler)
        cm_l = max(0.0, before - local_consistent_mass(after_marg))
        return UtilityRecord(tgt.target_id, ic_l, cm_l, ic_l - cm_l / self.pc)

    def _phase_tuple(self, gate: bool) -> str:
        targets = self._tuple_targets()
        utilities: dict[str, UtilityRecord] = {}
        gated = False
        while targets:
            if self._threshold_hit():
                return "threshold"
            for tid, tgt in targets.items():
                if tid not in utilities:
                    utilities[tid] = self._tuple_utility(tgt)
            pick = max(targets, key=lambda tid: (utilities[tid].utility, tid))
            rec = utilities.pop(pick)
            tgt = targets.pop(pick)
            if gate and rec.utility <= 0.0:
                gated = True
                break
            t0 = time.perf_counter()
            if not rec.feasible:
                self._record(pick, rec.utility, (), (time.perf_counter() - t0) * 1000,
                             skipped=True, note="annihilation: target skipped")
                continue
            new_rows, dropped_values = self._plan_tuple(tgt)
            if new_rows is None:
                self._record(pick, rec.utility, (), (time.perf_counter() - t0) * 1000,
                             skipped=True, note="annihilation: target skipped")
                continue
            self.state.set_rows(tgt.tuple_idx, new_rows)
            self._after_step(rec)
            self._record(pick, rec.utility, dropped_values, (time.perf_counter() - t0) * 1000)
            self._invalidate(utilities, targets, {tgt.tuple_idx})
        return "gated" if gated else "exhausted"

    # -- relation phase ---------------------------------------------------------
    def _class_utility(self, ic: Constraint, cls: NeedFixClass) -> UtilityRecord:
        cache_key = (ic.id, cls.key, cls.members)
        cached = self._class_util_cache.get(cache_key)
        if cached is not None and not self.cfg.full_refresh:
            return cached
        tid = ClassTarget(ic.id, cls.key).target_id
        if self.table is not None:
            # exact mode: simulate the complete class step (fix rounds plus
            # any escalation) on the live state, measure, then roll back, so
            # the utility is exactly the quality delta of executing it.
            saved = self.state.snapshot()
            removed, skipped, note = self._apply_class(ic, cls)
            cr2, ir2 = self.table.masses(self.state.rows)
            self.state.rollback(saved)
            if skipped:
                rec = UtilityRecord(tid, 0.0, 0.0, float("-inf"), feasible=False)
            else:
                rec = UtilityRecord(tid, self.ir - ir2, self.cr - cr2,
                                    (self.ir - ir2) - (self.cr - cr2) / self.pc)
            self._class_util_cache[cache_key] = rec
            return rec
        marg, raw = self._member_weights(cls)
        try:
            plan = fix_class(cls, self.cs, marg, raw,
                             exhaustive_bound=self.cfg.agg_exhaustive_bound,
                             restarts=self.cfg.hill_climb_restarts,
                             seed=self.cfg.sampler.master_seed)
        except InfeasibleClassError:
            rec = UtilityRecord(tid, 0.0, 0.0, float("-inf"), feasible=False)
            self._class_util_cache[cache_key] = rec
            return rec
        if plan.empty:
            rec = UtilityRecord(tid, 0.0, 0.0, 0.0)
            self._class_util_cache[cache_key] = rec
            return rec
        view = self.state.view()
        sim = simulate_apply_plan(view, cls.slots, plan)
        if sim.annihilated is not None:
            rec = UtilityRecord(tid, 0.0, 0.0, float("-inf"), feasible=False)
            self._class_util_cache[cache_key] = rec
            return rec
        ic_l = self._class_violation_mass(cls)
        cm_l = karp_luby_union_mass(sim.removed, self.rel, self.cfg.sampler) \
            if sim.removed else 0.0
        rec = UtilityRecord(tid, ic_l, cm_l, ic_l - cm_l / self.pc)
        self._class_util_cache[cache_key] = rec
        return rec

    def _class_violation_mass(self, cls: NeedFixClass) -> float:
        """Sampled local mass of member-tuple combinations violating the IC."""
        view = self.state.view()
        tuples = sorted(cls.tuples())
        if not tuples:
            return 0.0
        spaces = []
        mass_product = 1.0
        for i in tuples:
            insts = list(view.tuple_instances(i))
            probs = np.asarray([p for _, _, _, p in insts])
            mass = float(probs.sum())
            mass_product *= mass
            projs = [tuple(vals[j] for j in cls.slots) for _, _, vals, _ in insts]
            spaces.append((projs, np.cumsum(probs / mass)))
        member_projs: dict[int, set] = {i: set() for i in tuples}
        for m in cls.members:
            member_projs[m.tuple_idx].add(m.projection)
        n = required_samples(self.cfg.sampler.error_t, self.cfg.sampler.confidence)
        rng = np.random.default_rng(np.random.SeedSequence(
            self.cfg.sampler.master_seed, spawn_key=(_SALT_CLASS, _stable_hash((cls.ic.id, cls.key)))))
        draws = [np.searchsorted(cum, rng.random(n), side="right") for _, cum in spaces]
        hits = 0
        for s in range(n):
            realized = []
            for k, i in enumerate(tuples):
                proj = spaces[k][0][int(draws[k][s])]
                if proj in member_projs[i]:
                    realized.append((i, proj))
            if self._combo_violates(cls, realized):
                hits += 1
        return mass_product * hits / n

    @staticmethod
    def _combo_violates(cls: NeedFixClass, realized: list[tuple[int, tuple]]) -> bool:
        body = cls.ic.body
        if isinstance(body, (IND, SetConstraint)):
            return bool(realized)
        if isinstance(body, FD):
            nb = len(body.lhs)
            groups = {proj[nb:] for _, proj in realized}
            return len(groups) >= 2 and len({i for i, _ in realized}) >= 2
        if isinstance(body, AggCount):
            return len(realized) >= body.bound
        if isinstance(body, AggExp):
            cnt, tot = 0, 0.0
            for _, proj in realized:
                b = proj[-1]
                if b is not None:
                    cnt, tot = cnt + 1, tot + float(b)
            return bool(realized) and not agg_satisfied(body.func, body.theta, body.value, cnt, tot)
        return False

    def _apply_class(self, ic: Constraint, cls: NeedFixClass) -> tuple[list, bool, str]:
        """Fix + apply + regenerate until the class stops violating; escalate
        by direct choice removal when the coarse application stalls."""
        removed_all: list = []
        cur = cls
        affected = sorted(cls.tuples())
        for _ in range(64):
            marg, raw = self._member_weights(cur)
            try:
                plan = fix_class(cur, self.cs, marg, raw,
                                 exhaustive_bound=self.cfg.agg_exhaustive_bound,
                                 restarts=self.cfg.hill_climb_restarts,
                                 seed=self.cfg.sampler.master_seed)
            except InfeasibleClassError as e:
                return removed_all, True, f"infeasible: {e}"
            if plan.empty:
                return removed_all, False, ""
            view = self.state.view()
            sim = simulate_apply_plan(view, cur.slots, plan)
            if sim.annihilated is not None:
                return removed_all, True, f"annihilation at tuple {sim.annihilated}"
            for i, rows in sim.rows.items():
                self.state.set_rows(i, rows)
            removed_all.extend(sim.removed)
            cur2 = regenerate_class(self.state.view(), self.cs, ic, cur.key, affected)
            if not class_is_violating(self.cs, cur2):
                return removed_all, False, ""
            if not sim.removed:
                esc_removed, esc_skip, esc_note = self._escalate(cur2, plan)
                removed_all.extend(esc_removed)
                if esc_skip:
                    return removed_all, True, esc_note
                cur2 = regenerate_class(self.state.view(), self.cs, ic, cur.key, affected)
                if not class_is_violating(self.cs, cur2):
                    return removed_all, False, ""
            cur = cur2
        return removed_all, True, "fix loop exceeded round limit"

    def _escalate(self, cls: NeedFixClass, plan: FixPlan) -> tuple[list, bool, str]:
        """Remove the minimum-marginal choice of a dropped-but-representable
        member outright (the or-set cannot express the instance drop)."""
        view = self.state.view()
        still = [m for m in plan.drops
                 if m.projection in tuple_projections(view, m.tuple_idx, cls.slots)]
        if not still:
            return [], True, "residual violation not attributable to dropped members"
        removed: list = []
        for m in still:
            i = m.tuple_idx
            marginals = self._value_marginals(i)
            view = self.state.view()
            candidates = []
            for k, j in enumerate(cls.slots):
                values = view.values_of(i, j)
                for c in view.retained_union(i, j):
                    if values[c] == m.projection[k]:
                        candidates.append((marginals.get((j, c), 0.0), j, c))
            candidates.sort()
            committed = False
            for _, j, c in candidates:
                new_rows = []
                for row in self.state.rows[i]:
                    keep = row[j] - {c}
                    if keep:
                        nr = list(row)
                        nr[j] = frozenset(keep)
                        new_rows.append(tuple(nr))
                if new_rows:
                    self.state.set_rows(i, new_rows)
                    removed.append((i, j, c))
                    committed = True
                    break
            if not committed:
                return removed, True, f"annihilation at tuple {i} during escalation"
        return removed, False, ""

    def _phase_relation(self, gate: bool) -> str:
        view = self.state.view()
        ics = self.cs.relation_level
        if self.target_ics is not None:
            ics = tuple(c for c in ics if c.id in self.target_ics)
        indexes = {ic.id: _ClassIndex(view, self.cs, ic) for ic in ics}
        gated = False
        while True:
            if self._threshold_hit():
                return "threshold"
            candidates = []
            for ic_id, index in indexes.items():
                ic = self.cs.by_id(ic_id)
                for cls in index.violating():
                    if (ic_id, cls.key) in self._suppressed:
                        continue
                    if self.classes_must_touch is not None and \
                            not (cls.tuples() & self.classes_must_touch):
                        continue
                    candidates.append((self._class_utility(ic, cls), ic, cls))
            if not candidates:
                return "gated" if gated else "exhausted"
            candidates.sort(key=lambda c: (-c[0].utility, c[0].target_id))
            rec, ic, cls = candidates[0]
            if gate and rec.utility <= 0.0:
                return "gated"
            t0 = time.perf_counter()
            if not rec.feasible:
                self._record(rec.target_id, rec.utility, (), (time.perf_counter() - t0) * 1000,
                             skipped=True, note="annihilation or infeasible class: skipped")
                self._suppressed.add((ic.id, cls.key))
                continue
            removed, skipped, note = self._apply_class(ic, cls)
            dropped_values = tuple((i, j, self.rel.cell(i, j).choices[c].value)
                                   for (i, j, c) in sorted(removed))
            if skipped:
                self._record(rec.target_id, rec.utility, dropped_values,
                             (time.perf_counter() - t0) * 1000, skipped=True, note=note)
                self._suppressed.add((ic.id, cls.key))
            else:
                self._after_step(rec)
                self._record(rec.target_id, rec.utility, dropped_values,
                             (time.perf_counter() - t0) * 1000)
            touched = sorted(cls.tuples())
            fresh = self.state.view()
            for index in indexes.values():
                index.update(fresh, touched)

    def _after_step(self, rec: UtilityRecord):
        if self.table is not None:
            self.cr, self.ir = self.table.masses(self.state.rows)
        else:
            self.cr = max(0.0, self.cr - rec.cm_loss)
            self.ir = max(0.0, self.ir - rec.ic_loss)

    def _invalidate(self, utilities: dict, targets: dict, touched: set[int]):
        if self.cfg.full_refresh or self.table is not None:
            # exact utilities are global deltas: refresh everything
            utilities.clear()
            return
        for tid in list(utilities):
            tgt = targets.get(tid)
            if tgt is not None and tgt.tuple_idx in touched:
                utilities.pop(tid)

    def _threshold_hit(self) -> bool:
        return self.cfg.threshold > 0.0 and self.cr <= self.cfg.threshold

    def run(self) -> tuple[SubRelation, ResolutionTrace]:
        gate = self.cfg.mode == "greedy"
        termination = "exhausted"
        self._attribute_phase()
        if self._threshold_hit():
            termination = "threshold"
        else:
            t_done = self._phase_tuple(gate)
            if t_done == "threshold":
                termination = "threshold"
            else:
                r_done = self._phase_relation(gate)
                if r_done == "threshold":
                    termination = "threshold"
                elif gate and (t_done == "gated" or r_done == "gated"):
                    termination = "no_positive_utility"
        gamma = 1.0 / self.pc
        sub = self.state.subrelation(gamma)
        trace = ResolutionTrace(self.trace, termination, self.pc, gamma,
                                self.cfg.mode, self.utility_mode,
                                self.cfg.sampler.master_seed)
        return sub, trace


# ---------------------------------------------------------------------------
# Public API

def greedy_resolve(rel: UncertainRelation, cs: ConstraintSet,
                   cfg: ResolveConfig | None = None) -> tuple[SubRelation, ResolutionTrace]:
    cfg = cfg or ResolveConfig()
    if cfg.mode != "greedy":
        cfg = replace(cfg, mode="greedy")
    return _Resolver(rel, cs, cfg).run()


def resolve_all(rel: UncertainRelation, cs: ConstraintSet,
                cfg: ResolveConfig | None = None) -> tuple[SubRelation, ResolutionTrace]:
    cfg = cfg or ResolveConfig()
    if cfg.mode != "all":
        cfg = replace(cfg, mode="all")
    return _Resolver(rel, cs, cfg).run()


def compute_utility(rel: UncertainRelation, cs: ConstraintSet,
                    target: TupleTarget | ClassTarget,
                    cfg: ResolveConfig | None = None,
                    sub: SubRelation | None = None) -> UtilityRecord:
    """Utility of resolving one target against the current (sub-)relation."""
    cfg = cfg or ResolveConfig()
    r = _Resolver(rel, cs, cfg, initial_rows=sub.rows if sub is not None else None)
    if isinstance(target, TupleTarget):
        return r._tuple_utility(target)
    ic = cs.by_id(target.ic_id)
    index = _ClassIndex(r.state.view(), cs, ic)
    for cls in index.violating():
        if cls.key == target.key:
            return r._class_utility(ic, cls)
    return UtilityRecord(target.target_id, 0.0, 0.0, 0.0)


def apply_relation_ic(rel_or_sub, cs: ConstraintSet, ic: Constraint,
                      cfg: ResolveConfig | None = None) -> tuple[SubRelation, ResolutionTrace]:
    """Generate, fix and apply every violating class of one relation-level
    constraint; gamma is re-estimated on the result's base relation."""
    cfg = cfg or ResolveConfig()
    if isinstance(rel_or_sub, SubRelation):
        rel, rows = rel_or_sub.base, rel_or_sub.rows
    else:
        rel, rows = rel_or_sub, None
    if ic.id in {c.id for c in cs.constraints}:
        full = cs
    else:
        full = ConstraintSet(cs.schema, cs.constraints + (ic,), cs.externals, cs.registry)
    r = _Resolver(rel, full, replace(cfg, mode="all"), initial_rows=rows,
                  target_ics={ic.id})
    return r.run()


def incremental_add_ics(sub: SubRelation, old_cs: ConstraintSet, new_cs: ConstraintSet,
                        cfg: ResolveConfig | None = None) -> tuple[SubRelation, ResolutionTrace]:
    """Resolve newly added constraints on an existing approximation:
    attribute checks first, then the new tuple/relation constraints
    greedily. Gamma is re-estimated against the combined constraint set."""
    cfg = cfg or ResolveConfig()
    combined, new_ids = merge_constraint_sets(old_cs, new_cs)
    r = _Resolver(sub.base, combined, cfg, initial_rows=sub.rows, target_ics=new_ids)
    return r.run()


def incremental_add_tuples(sub: SubRelation, new_tuples: Sequence, cs: ConstraintSet,
                           cfg: ResolveConfig | None = None) -> tuple[SubRelation, ResolutionTrace]:
    """Append new tuples to an existing approximation: attribute and tuple
    constraints are resolved only on the new tuples, relation constraints
    only for classes touching at least one new tuple."""
    cfg = cfg or ResolveConfig()
    from .model import UncertainTuple
    base = sub.base
    renumbered = [UncertainTuple(t.cells, tuple_id=base.n + k) for k, t in enumerate(new_tuples)]
    rel2 = UncertainRelation(base.schema, base.tuples + tuple(renumbered))
    cs2 = ConstraintSet(rel2.schema, cs.constraints, cs.externals, cs.registry)
    rows = list(sub.rows) + [(identity_row(t),) for t in renumbered]
    new_idx = set(range(base.n, rel2.n))
    r = _Resolver(rel2, cs2, cfg, initial_rows=rows,
                  target_tuples=new_idx, classes_must_touch=new_idx)
    return r.run()


def merge_constraint_sets(old_cs: ConstraintSet, new_cs: ConstraintSet
                          ) -> tuple[ConstraintSet, set[str]]:
    """Combine two sets over the same schema, renaming colliding ids."""
    taken = {c.id for c in old_cs.constraints}
    renamed = []
    new_ids = set()
    for c in new_cs.constraints:
        cid = c.id
        while cid in taken:
            cid = cid + "n"
        taken.add(cid)
        new_ids.add(cid)
        renamed.append(Constraint(cid, c.body))
    externals = dict(old_cs.externals)
    externals.update(new_cs.externals)
    registry = dict(old_cs.registry)
    registry.update(new_cs.registry)
    combined = ConstraintSet(old_cs.schema, old_cs.constraints + tuple(renamed),
                             externals, registry)
    return combined, new_ids
