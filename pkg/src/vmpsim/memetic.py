"""Memetic placement search over whole-datacenter assignments.

A chromosome is an int vector with one gene per alive VM (ordered by vm_id):
``0`` sends the VM off the provider (federated, or rejected when federation
is disabled) and ``1..n`` names the hosting PM.

Fitness is evaluated in bulk by :class:`Problem`, which mirrors the scalar
objective code in :mod:`vmpsim.objectives` on numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .model import (FEDERATED, NUM_RESOURCES, REJECTED, _CAP_TOL, DatacenterState,
                    PlacementError, ProblemConfig)
from .objectives import compute_bounds


@dataclass(frozen=True)
class MaParams:
    population_size: int = 100
    generations: int = 100
    crossover_rate: float = 0.9
    mutation_rate: Optional[float] = None   # None -> 1/m
    tournament_size: int = 2
    local_search_moves: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.generations < 0 or self.tournament_size < 1 or self.local_search_moves < 0:
            raise ValueError("generations, tournament_size and local_search_moves must be non-negative")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "MaParams":
        extra = set(data) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown MA keys: {sorted(extra)}")
        return cls(**data)


@dataclass
class MigrationPlan:
    moves: list = field(default_factory=list)       # (vm_id, src_pm, dst_pm, ram)
    transfer: dict = field(default_factory=dict)    # (src, dst) -> GB

    @property
    def count(self) -> int:
        return len(self.moves)

    @property
    def total_gb(self) -> float:
        return float(sum(m[3] for m in self.moves))

    @property
    def moved(self) -> frozenset:
        return frozenset(m[0] for m in self.moves)


def build_migration_plan(source: dict, target: dict, state: DatacenterState) -> MigrationPlan:
    """PM-to-PM moves between two placements; federation boundaries are not migrations."""
    plan = MigrationPlan()
    for vm_id in sorted(set(source) & set(target)):
        src, dst = source[vm_id], target[vm_id]
        if src > 0 and dst > 0 and src != dst:
            ram = state.vms[vm_id].ram
            plan.moves.append((vm_id, src, dst, ram))
            plan.transfer[(src, dst)] = plan.transfer.get((src, dst), 0.0) + ram
    return plan


def apply_placement(state: DatacenterState, placement: dict):
    """Move ``state`` to ``placement``. Hosted VMs keep their committed reservation."""
    changed = sorted(j for j, loc in placement.items() if state.placement.get(j) != loc)
    keep = {j: state.reservation_of(j) for j in changed}
    for j in changed:
        state.unplace(j)
    for j in changed:
        state.place(j, placement[j], reservation=keep[j])


class Problem:
    """Array view of one snapshot, evaluating many chromosomes at once."""

    def __init__(self, snapshot: DatacenterState, config: ProblemConfig,
                 incumbent: Optional[dict] = None):
        self.config = config
        self.ids = sorted(snapshot.vms)
        self.m, self.n = len(self.ids), snapshot.n
        vms = [snapshot.vms[j] for j in self.ids]
        shape = (self.m, NUM_RESOURCES)
        demand = np.array([vm.demand for vm in vms], dtype=float).reshape(shape)
        util = np.array([vm.utilization for vm in vms], dtype=float).reshape(shape)
        self.ram = demand[:, 1].copy()
        self.usage = demand * util
        boosted = demand[:, 0] * np.minimum(1.0, util[:, 0] + config.migration_cpu_overhead)
        self.extra_cpu = boosted - self.usage[:, 0]
        self.reserved = np.array([snapshot.reservation_of(j) for j in self.ids],
                                 dtype=float).reshape(shape)
        self.revenue = np.array([vm.revenue for vm in vms], dtype=float)
        self.res_revenue = np.array([vm.resource_revenue() for vm in vms], dtype=float).reshape(shape)
        self.sla = np.array([vm.sla for vm in vms], dtype=int)
        c = float(config.c_hat)
        self.qos = np.array([c ** vm.sla * vm.sla for vm in vms], dtype=float)
        self.cap = np.array([pm.capacity for pm in snapshot.pms], dtype=float).reshape(self.n, NUM_RESOURCES)
        self.cap_tol = self.cap + _CAP_TOL * np.maximum(1.0, self.cap)
        self.pmax = np.array([pm.pmax for pm in snapshot.pms], dtype=float)
        self.pmin = config.pmin_factor * self.pmax
        self.upper = np.array(compute_bounds(snapshot, config).upper, dtype=float)
        placement = snapshot.placement if incumbent is None else incumbent
        self.incumbent = np.array([max(placement.get(j, 0) or 0, 0) for j in self.ids], dtype=np.int64)
        self.part2 = config.objective_set == "part2"
        # sla-s VMs may not be rejected; federated ones are always fine
        self.must_host = (self.sla >= config.s) & (not config.federation)
        if config.scalarizer == "ws":
            self.weights = np.array(config.ws_weights, dtype=float)

    # -- encoding ----------------------------------------------------------

    def decode(self, genes) -> dict:
        off = FEDERATED if self.config.federation else REJECTED
        return {j: (int(g) if g > 0 else off) for j, g in zip(self.ids, genes)}

    def encode(self, placement: dict) -> np.ndarray:
        return np.array([max(placement.get(j, 0) or 0, 0) for j in self.ids], dtype=np.int64)

    # -- bulk evaluation --------------------------------------------------

    def moved_mask(self, genes: np.ndarray) -> np.ndarray:
        inc = self.incumbent[None, :]
        return (genes > 0) & (inc > 0) & (genes != inc)

    def evaluate(self, genes) -> tuple:
        """Returns (costs, normalized (rows, 4), raw (rows, 4), feasible)."""
        genes = np.atleast_2d(np.asarray(genes, dtype=np.int64))
        rows = genes.shape[0]
        if self.m == 0:
            raw = np.zeros((rows, 4))
            norm = np.zeros((rows, 4))
            return self._scalarize(norm), norm, raw, np.ones(rows, dtype=bool)
        reserved = self._sum_rows(genes, np.broadcast_to(self.reserved, (rows, self.m, NUM_RESOURCES)))
        feasible = np.all(reserved <= self.cap_tol[None], axis=(1, 2))
        off = genes == 0
        if self.must_host.any():
            feasible &= ~np.any(off & self.must_host[None, :], axis=1)

        usage = np.broadcast_to(self.usage, (rows, self.m, NUM_RESOURCES)).copy()
        if self.part2:
            usage[:, :, 0] += self.moved_mask(genes) * self.extra_cpu[None, :]
        hosted = genes > 0
        usage *= hosted[:, :, None]
        pm_usage = self._sum_rows(genes, usage)
        count = self._sum_rows(genes, hosted[:, :, None].astype(float))[:, :, 0]
        on = count > 0
        util = pm_usage / self.cap[None]
        served = np.minimum(util, 1.0)

        power = np.sum(on * ((self.pmax - self.pmin)[None] * served[:, :, 0] + self.pmin[None]), axis=1)
        federated = off if self.config.federation else np.zeros_like(off)
        money = federated @ (self.revenue * self.config.federation_factor)
        n_on = on.sum(axis=1)
        waste_sum = np.sum(on * (1.0 - served.mean(axis=2)), axis=1)
        wasted = np.divide(waste_sum, n_on, out=np.zeros(rows), where=n_on > 0)
        if self.part2:
            over = pm_usage > self.cap[None]
            ratio = np.zeros_like(pm_usage)
            np.divide(pm_usage - self.cap[None], pm_usage, out=ratio, where=over)
            ratio = np.concatenate([np.zeros((rows, 1, NUM_RESOURCES)), ratio], axis=1)
            per_vm = ratio[np.arange(rows)[:, None], genes]           # (rows, m, 3)
            money = money + np.sum(per_vm * self.res_revenue[None], axis=(1, 2))
            raw = np.stack([power, money, wasted, self._max_transfer(genes)], axis=1)
        else:
            qos = federated @ self.qos
            raw = np.stack([power, money, qos, wasted], axis=1)
        norm = np.zeros_like(raw)
        np.divide(raw, self.upper[None], out=norm, where=self.upper[None] > 0)
        np.clip(norm, 0.0, 1.0, out=norm)
        costs = np.where(feasible, self._scalarize(norm), np.inf)
        return costs, norm, raw, feasible

    def _sum_rows(self, genes, weights):
        """Sum per-VM ``weights`` (rows, m, k) onto PMs -> (rows, n, k); gene 0 dropped."""
        rows = genes.shape[0]
        flat = (genes + (self.n + 1) * np.arange(rows)[:, None]).ravel()
        size = rows * (self.n + 1)
        out = np.stack([np.bincount(flat, weights=weights[:, :, k].ravel(), minlength=size)
                        for k in range(weights.shape[2])], axis=-1)
        return out.reshape(rows, self.n + 1, -1)[:, 1:, :]

    def _max_transfer(self, genes) -> np.ndarray:
        rows = genes.shape[0]
        moved = self.moved_mask(genes)
        out = np.zeros(rows)
        r, j = np.nonzero(moved)
        if r.size == 0:
            return out
        key = (r * self.n + (self.incumbent[j] - 1)) * self.n + (genes[r, j] - 1)
        uniq, inv = np.unique(key, return_inverse=True)
        sums = np.bincount(inv, weights=self.ram[j])
        np.maximum.at(out, uniq // (self.n * self.n), sums)
        return out

    def _scalarize(self, norm: np.ndarray) -> np.ndarray:
        method = self.config.scalarizer
        if method == "ws":
            return norm @ self.weights
        if method == "ed":
            return np.sqrt(np.sum(norm * norm, axis=1))
        return np.max(norm, axis=1)

    def cost(self, genes) -> float:
        return float(self.evaluate(np.asarray(genes)[None])[0][0])

    # -- per-chromosome helpers --------------------------------------------

    def loads(self, genes: np.ndarray):
        """Reserved load and actual use per PM for one chromosome, shape (n, 3)."""
        hosted = genes > 0
        idx = genes[hosted] - 1
        reserved = np.zeros((self.n, NUM_RESOURCES))
        usage = np.zeros((self.n, NUM_RESOURCES))
        np.add.at(reserved, idx, self.reserved[hosted])
        np.add.at(usage, idx, self.usage[hosted])
        return reserved, usage

    def scores(self, usage: np.ndarray, powered: np.ndarray) -> np.ndarray:
        """Unused-capacity score per PM; idle PMs score the resource count."""
        s = np.sum(1.0 - usage / self.cap, axis=1)
        return np.where(powered, s, float(NUM_RESOURCES))

    def off_location(self, j: int) -> int:
        if self.must_host[j]:
            raise PlacementError(
                f"VM {self.ids[j]} (sla={self.sla[j]}) fits on no PM and federation is disabled")
        return 0

    def construct(self, rule: str, decreasing: bool = True) -> np.ndarray:
        """Greedy placement of every VM from an empty datacenter (ff / bf / wf)."""
        genes = np.zeros(self.m, dtype=np.int64)
        order = np.arange(self.m)
        if decreasing:
            order = np.lexsort((order, -self.reserved[:, 0]))
        reserved = np.zeros((self.n, NUM_RESOURCES))
        usage = np.zeros((self.n, NUM_RESOURCES))
        count = np.zeros(self.n, dtype=int)
        for j in order:
            fits = np.all(reserved + self.reserved[j] <= self.cap_tol, axis=1)
            if not fits.any():
                genes[j] = self.off_location(j)
                continue
            cand = np.flatnonzero(fits)
            if rule == "ff":
                p = cand[0]
            else:
                sc = self.scores(usage, count > 0)[cand]
                p = cand[np.argmin(sc)] if rule == "bf" else cand[np.argmax(sc)]
            genes[j] = p + 1
            reserved[p] += self.reserved[j]
            usage[p] += self.usage[j]
            count[p] += 1
        return genes


# -- operators -------------------------------------------------------------------

def crossover(a: np.ndarray, b: np.ndarray, rng) -> tuple:
    """Uniform crossover: each gene swaps between the parents with probability 1/2."""
    if a.shape != b.shape:
        raise ValueError("parents differ in length")
    swap = rng.random(a.shape) < 0.5
    c1, c2 = a.copy(), b.copy()
    c1[swap], c2[swap] = b[swap], a[swap]
    return c1, c2


def mutate(c: np.ndarray, rng, rate: float, n: int) -> np.ndarray:
    """Resample each gene uniformly from 0..n with probability ``rate``."""
    out = c.copy()
    hit = rng.random(c.shape) < rate
    k = int(hit.sum())
    if k:
        out[hit] = rng.integers(0, n + 1, size=k)
    return out


@njit(cache=True)
def _repair_kernel(g, res, use, cap, cap_tol, must_host):
    n, m = cap.shape[0], g.shape[0]
    load = np.zeros((n, 3))
    used = np.zeros((n, 3))
    count = np.zeros(n, np.int64)
    for j in range(m):
        p = g[j] - 1
        if p >= 0:
            load[p] += res[j]
            used[p] += use[j]
            count[p] += 1
    pending = np.empty(m, np.int64)
    npend = 0
    for j in range(m):
        if g[j] == 0 and must_host[j]:
            pending[npend] = j
            npend += 1
    for p in range(n):
        if np.all(load[p] <= cap_tol[p]):
            continue
        idx = np.nonzero(g == p + 1)[0]
        order = np.argsort(-res[idx, 0], kind="mergesort")
        for t in order:
            if np.all(load[p] <= cap_tol[p]):
                break
            j = idx[t]
            load[p] -= res[j]
            used[p] -= use[j]
            count[p] -= 1
            g[j] = 0
            pending[npend] = j
            npend += 1
    pend = np.sort(pending[:npend])
    order = np.argsort(-res[pend, 0], kind="mergesort")
    for t in order:
        j = pend[t]
        best, best_score = -1, np.inf
        for p in range(n):
            if not np.all(load[p] + res[j] <= cap_tol[p]):
                continue
            score = 3.0
            if count[p] > 0:
                score = np.sum(1.0 - used[p] / cap[p])
            if score < best_score:
                best, best_score = p, score
        if best < 0:
            if must_host[j]:
                return j
            g[j] = 0
            continue
        g[j] = best + 1
        load[best] += res[j]
        used[best] += use[j]
        count[best] += 1
    return -1


def repair(genes: np.ndarray, problem: Problem) -> np.ndarray:
    """Evict the largest-CPU VMs from overloaded PMs and best-fit them elsewhere.

    Evicted VMs (and must-host VMs left off-provider) are re-placed largest
    CPU first on the most utilized PM with room; those that fit nowhere go
    off-provider.
    """
    g = np.array(genes, dtype=np.int64)
    if problem.m == 0:
        return g
    failed = _repair_kernel(g, problem.reserved, problem.usage, problem.cap,
                            problem.cap_tol, problem.must_host)
    if failed >= 0:
        problem.off_location(int(failed))
    return g


def local_search(genes: np.ndarray, problem: Problem, budget: int,
                 cost: Optional[float] = None) -> tuple:
    """Hill-climb with consolidation moves; returns (genes, cost).

    Each round proposes moving every VM of the least-loaded powered PM onto
    each more-utilized powered PM with room, plus pulling each off-provider VM
    onto its best-fitting PM. The best proposal is taken only if it is
    strictly cheaper; at most ``budget`` moves are accepted.
    """
    g = genes.copy()
    if cost is None:
        cost = problem.cost(g)
    for _ in range(budget):
        reserved, usage = problem.loads(g)
        powered = np.zeros(problem.n, dtype=bool)
        powered[np.unique(g[g > 0]) - 1] = True
        score = problem.scores(usage, powered)
        cands = []
        on = np.flatnonzero(powered)
        if on.size > 1:
            src = on[np.lexsort((on, -score[on]))][0]
            targets = on[(on != src) & (score[on] < score[src])]
            for j in np.flatnonzero(g == src + 1):
                room = np.all(reserved[targets] + problem.reserved[j] <= problem.cap_tol[targets], axis=1)
                for p in targets[room]:
                    c = g.copy()
                    c[j] = p + 1
                    cands.append(c)
        for j in np.flatnonzero(g == 0):
            fits = np.all(reserved + problem.reserved[j] <= problem.cap_tol, axis=1)
            if fits.any():
                cand = np.flatnonzero(fits)
                c = g.copy()
                c[j] = cand[np.argmin(score[cand])] + 1
                cands.append(c)
        if not cands:
            break
        costs = problem.evaluate(np.array(cands))[0]
        best = int(np.argmin(costs))
        if not costs[best] < cost:
            break
        g, cost = cands[best], float(costs[best])
    return g, cost


# -- evolution -------------------------------------------------------------------

def _unique_sorted(pop: np.ndarray, costs: np.ndarray, limit: int):
    pop, idx = np.unique(pop, axis=0, return_index=True)
    costs = costs[idx]
    order = np.argsort(costs, kind="stable")[:limit]
    return pop[order], costs[order]


def _tournament(costs: np.ndarray, size: int, count: int, rng) -> np.ndarray:
    picks = rng.integers(0, len(costs), size=(count, size))
    return picks[np.arange(count), np.argmin(costs[picks], axis=1)]


def _offspring(pop, costs, problem: Problem, params: MaParams, rate: float, rng) -> np.ndarray:
    half = (params.population_size + 1) // 2
    a = pop[_tournament(costs, params.tournament_size, half, rng)]
    b = pop[_tournament(costs, params.tournament_size, half, rng)]
    mate = rng.random(half) < params.crossover_rate
    c1, c2 = crossover(a[mate], b[mate], rng)
    a[mate], b[mate] = c1, c2
    kids = np.empty((2 * half, problem.m), dtype=np.int64)
    kids[0::2], kids[1::2] = a, b
    return mutate(kids[:params.population_size], rng, rate, problem.n)


def initial_population(problem: Problem, params: MaParams, rng) -> np.ndarray:
    seeds = [problem.incumbent.copy(), problem.construct("bf"), problem.construct("ff")]
    members = [repair(s, problem) for s in seeds]
    while len(members) < params.population_size:
        if problem.n:
            g = rng.integers(1, problem.n + 1, size=problem.m)
        else:
            g = np.zeros(problem.m, dtype=np.int64)
        members.append(repair(g, problem))
    return np.array(members, dtype=np.int64).reshape(len(members), problem.m)


def evolve(snapshot: DatacenterState, params: MaParams, config: ProblemConfig,
           history: Optional[list] = None, incumbent: Optional[dict] = None) -> dict:
    """Search a full placement of the snapshot's alive VMs; returns vm_id -> location.

    The incumbent placement is part of the first generation and survivors are
    chosen elitist, so the result never costs more than the incumbent (when
    the incumbent is feasible). ``history`` receives the best cost per
    generation.
    """
    problem = Problem(snapshot, config, incumbent)
    if problem.m == 0:
        return {}
    rng = np.random.default_rng(params.rng_seed)
    rate = params.mutation_rate if params.mutation_rate is not None else 1.0 / problem.m
    pop = initial_population(problem, params, rng)
    costs = problem.evaluate(pop)[0]
    inc_cost = problem.evaluate(problem.incumbent[None])[0]
    pop = np.vstack([pop, problem.incumbent[None]])
    costs = np.concatenate([costs, inc_cost])
    pop, costs = _unique_sorted(pop, costs, params.population_size)
    if history is not None:
        history.append(float(costs[0]))
    for _ in range(params.generations):
        kids = _offspring(pop, costs, problem, params, rate, rng)
        kid_costs = problem.evaluate(kids)[0]
        bad = np.flatnonzero(~np.isfinite(kid_costs))
        if bad.size:
            kids[bad] = [repair(kids[i], problem) for i in bad]
            kid_costs[bad] = problem.evaluate(kids[bad])[0]
        if params.local_search_moves:
            best = int(np.argmin(kid_costs))
            kids[best], kid_costs[best] = local_search(kids[best], problem,
                                                       params.local_search_moves, kid_costs[best])
        pop, costs = _unique_sorted(np.vstack([pop, kids]), np.concatenate([costs, kid_costs]),
                                    params.population_size)
        if history is not None:
            history.append(float(costs[0]))
    return problem.decode(pop[0])
