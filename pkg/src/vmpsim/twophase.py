"""Discrete-time simulation: online placement plus periodic reconfiguration.

Every step runs, in order:

1. if a reconfiguration job is due: merge its result with the live placement
   and adopt it only if that lowers the scalarized cost;
2. departures, utilization changes, scale-downs, then scale-ups (a scale-up
   that no longer fits in place evicts the VM);
3. the configured heuristic places the step's creations as one batch, then
   each evicted VM on its own;
4. objectives are recorded;
5. if the trigger fires and no job is in flight, a snapshot is handed to the
   memetic search, whose result is consumed ``vmpr_duration`` steps later.

The job's outcome depends only on the snapshot and a seed derived from the
step, so running it on a worker thread gives the same run as running it inline.
"""
from __future__ import annotations

import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .heuristics import place_batch
from .memetic import MaParams, MigrationPlan, apply_placement, build_migration_plan, evolve
from .model import (CreateVm, DatacenterState, DestroyVm, ModelError, ProblemConfig, ScaleVm,
                    UtilizationUpdate, VirtualMachine, apply_event, validate_placement)
from .objectives import OBJECTIVE_NAMES, cost, evaluate, scalarize

ALGORITHMS = ("ff", "bf", "wf", "ffd", "bfd", "ma", "two-phase")


@dataclass(frozen=True)
class StepRecord:
    t: int
    raw: tuple
    normalized: tuple
    cost: float


@dataclass
class SimulationRun:
    objective_names: tuple
    records: list = field(default_factory=list)
    migrations: int = 0
    migrated_gb: float = 0.0
    jobs: int = 0
    adoptions: int = 0
    final_placement: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)   # phase -> seconds; not part of results

    @property
    def costs(self) -> list:
        return [r.cost for r in self.records]

    def mean_normalized(self) -> tuple:
        if not self.records:
            return (0.0,) * len(self.objective_names)
        return tuple(float(np.mean(col)) for col in zip(*(r.normalized for r in self.records)))

    def mean_raw(self) -> tuple:
        if not self.records:
            return (0.0,) * len(self.objective_names)
        return tuple(float(np.mean(col)) for col in zip(*(r.raw for r in self.records)))


@dataclass
class VmprJob:
    t0: int
    due: int
    snapshot: DatacenterState
    future: Optional[Future] = None
    result: Optional[dict] = None

    def outcome(self) -> dict:
        if self.result is None:
            self.result = self.future.result()
        return self.result


def vmpr_trigger(t: int, period: Optional[int]) -> bool:
    return period is not None and t > 0 and t % period == 0


def job_seed(base_seed: int, t0: int) -> int:
    return int(np.random.SeedSequence([base_seed, t0]).generate_state(1)[0])


def merge_placement(result: dict, current: DatacenterState) -> dict:
    """Join a reconfiguration result with the live placement.

    VMs destroyed since the snapshot are dropped and VMs created since keep
    their spot. Each reconfigured VM takes its new location only if it still
    fits next to everything merged so far; moves are retried until no more
    succeed, and the rest stay where they are.
    """
    work = current.copy()
    pending = [(j, loc) for j, loc in sorted(result.items())
               if j in work.placement and work.placement[j] != loc]
    progress = True
    while pending and progress:
        progress, rest = False, []
        for j, loc in pending:
            res = work.reservation_of(j)
            if loc > 0 and not work.room_for(res, loc):
                rest.append((j, loc))
                continue
            work.place(j, loc, reservation=res if loc > 0 else None)
            progress = True
        pending = rest
    return dict(work.placement)


def candidate_cost(candidate: dict, current: DatacenterState, config: ProblemConfig):
    """Scalarized cost of moving ``current`` to ``candidate`` at this instant."""
    trial = current.copy()
    plan = build_migration_plan(current.placement, candidate, current)
    apply_placement(trial, candidate)
    if config.objective_set == "part2":
        trial.set_boosted(plan.moved)
    vec = evaluate(trial, config, plan)
    return scalarize(vec, config.scalarizer, config.ws_weights), plan


def adopt_if_better(candidate: dict, current: DatacenterState, config: ProblemConfig):
    """Returns (adopted, plan). On adoption ``current`` is moved in place."""
    before = cost(current, config)
    after, plan = candidate_cost(candidate, current, config)
    if not after < before:
        return False, plan
    apply_placement(current, candidate)
    if config.objective_set == "part2":
        current.set_boosted(plan.moved)
    return True, plan


# -- trace replay ----------------------------------------------------------------

def _group_by_step(trace) -> dict:
    steps = {}
    for e in trace:
        steps.setdefault(e.t, []).append(e)
    return steps


def _vm_from_row(vm_id: int, e) -> VirtualMachine:
    return VirtualMachine(
        vm_id, (e.cpu, e.ram, e.net), revenue=e.revenue,
        sla=e.sla if e.sla is not None else 1,
        utilization=(e.u_cpu / 100.0, e.u_ram / 100.0, e.u_net / 100.0),
        service_id=e.b, datacenter_id=e.c, t_init=e.t_init, t_end=e.t_end,
        rates=(e.r_cpu, e.r_ram, e.r_net))


class _Replay:
    """Turns per-step snapshot rows into lifecycle events with stable vm ids."""

    def __init__(self, trace):
        self.steps = _group_by_step(trace)
        self.ids = {}
        self.next_id = 1

    def events(self, t: int, state: DatacenterState):
        rows = {e.key: e for e in self.steps.get(t, ())}
        gone = sorted(self.ids[k] for k in self.ids if k not in rows)
        destroys = [DestroyVm(j) for j in gone]
        self.ids = {k: j for k, j in self.ids.items() if k in rows}
        updates, downs, ups, creates = [], [], [], []
        for key in sorted(rows):
            e = rows[key]
            if key not in self.ids:
                self.ids[key] = self.next_id
                creates.append(CreateVm(_vm_from_row(self.next_id, e)))
                self.next_id += 1
                continue
            vm = state.vms[self.ids[key]]
            util = (e.u_cpu / 100.0, e.u_ram / 100.0, e.u_net / 100.0)
            if util != vm.utilization:
                updates.append(UtilizationUpdate(vm.vm_id, util))
            demand = (e.cpu, e.ram, e.net)
            if demand != vm.demand:
                scale = ScaleVm(vm.vm_id, demand, e.revenue)
                (downs if all(a <= b for a, b in zip(demand, vm.demand)) else ups).append(scale)
        return destroys, updates, downs, ups, creates


# -- simulation ------------------------------------------------------------------

def run_simulation(trace, pms, config: ProblemConfig, t_max: Optional[int] = None,
                   ma_params: Optional[MaParams] = None, algorithm: str = "online",
                   executor: str = "inline", check: bool = False) -> SimulationRun:
    """Simulate steps ``0 .. t_max - 1`` of ``trace`` on the given PMs.

    ``algorithm`` is ``"online"`` (heuristic placement, plus reconfiguration
    when ``config.vmpr_period`` is set) or ``"ma"`` (heuristic placement
    followed by a full memetic re-optimization at every step that changed the
    VM set). ``check`` validates every step's placement.
    """
    if algorithm not in ("online", "ma"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if executor not in ("inline", "thread"):
        raise ValueError(f"unknown executor {executor!r}")
    trace = list(trace)
    if t_max is None:
        t_max = max((e.t for e in trace), default=-1) + 1
    ma_params = ma_params or MaParams()
    state = DatacenterState(list(pms), protection=config.protection,
                            cpu_boost=config.migration_cpu_overhead)
    run = SimulationRun(OBJECTIVE_NAMES[config.objective_set])
    timings = {"ivmp": 0.0, "vmpr": 0.0, "record": 0.0}
    replay = _Replay(trace)
    pool = ThreadPoolExecutor(max_workers=1) if executor == "thread" else None
    job: Optional[VmprJob] = None
    try:
        for t in range(t_max):
            state.t = t
            if state.boosted:
                state.set_boosted(())
            plan: Optional[MigrationPlan] = None

            clock = time.perf_counter()
            if job is not None and job.due == t:
                merged = merge_placement(job.outcome(), state)
                adopted, candidate_plan = adopt_if_better(merged, state, config)
                if adopted:
                    plan = candidate_plan
                    run.adoptions += 1
                    run.migrations += plan.count
                    run.migrated_gb += plan.total_gb
                job = None
            timings["vmpr"] += time.perf_counter() - clock

            clock = time.perf_counter()
            destroys, updates, downs, ups, creates = replay.events(t, state)
            evicted = []
            for ev in destroys + updates + downs + ups:
                evicted.extend(apply_event(state, ev))
            for ev in creates:
                apply_event(state, ev)
            if creates:
                place_batch(config.heuristic, [ev.vm for ev in creates], state, config)
            for vm_id in evicted:
                place_batch(config.heuristic, [state.vms[vm_id]], state, config)
            timings["ivmp"] += time.perf_counter() - clock

            if algorithm == "ma" and (destroys or downs or ups or creates):
                clock = time.perf_counter()
                params = replace(ma_params, rng_seed=job_seed(config.rng_seed, t))
                result = evolve(state, params, config)
                moves = build_migration_plan(state.placement, result, state)
                apply_placement(state, result)
                run.migrations += moves.count
                run.migrated_gb += moves.total_gb
                timings["vmpr"] += time.perf_counter() - clock

            clock = time.perf_counter()
            if check:
                problems = validate_placement(state, config)
                if problems:
                    raise ModelError(f"t={t}: invalid placement {problems[:3]}")
            vec = evaluate(state, config, plan)
            run.records.append(StepRecord(t, vec.raw, vec.normalized,
                                          scalarize(vec, config.scalarizer, config.ws_weights)))
            timings["record"] += time.perf_counter() - clock

            if algorithm == "online" and job is None and vmpr_trigger(t, config.vmpr_period) and state.vms:
                clock = time.perf_counter()
                snapshot = state.copy()
                params = replace(ma_params, rng_seed=job_seed(config.rng_seed, t))
                job = VmprJob(t, t + config.vmpr_duration, snapshot)
                if pool is not None:
                    job.future = pool.submit(evolve, snapshot, params, config)
                else:
                    job.result = evolve(snapshot, params, config)
                run.jobs += 1
                timings["vmpr"] += time.perf_counter() - clock
    finally:
        if pool is not None:
            pool.shutdown(wait=True, cancel_futures=True)
    run.final_placement = dict(sorted(state.placement.items()))
    run.timings = timings
    return run
