"""Objective functions, normalization and scalarization.

This is the straightforward per-VM/per-PM implementation. The memetic
optimizer carries its own vectorized evaluator and the test-suite checks the
two against each other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .model import FEDERATED, NUM_RESOURCES, DatacenterState, ConfigError, ProblemConfig

OBJECTIVE_NAMES = {
    "part1": ("power", "federation_cost", "qos_violation", "wasted"),
    "part2": ("power", "economic", "wasted", "reconfiguration"),
}


@dataclass(frozen=True)
class ObjectiveVector:
    raw: tuple
    normalized: tuple
    names: tuple = OBJECTIVE_NAMES["part1"]

    def __post_init__(self):
        if any(not 0.0 <= v <= 1.0 for v in self.normalized):
            raise ValueError(f"normalized values outside [0, 1]: {self.normalized}")


@dataclass(frozen=True)
class ObjectiveBounds:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if any(hi < lo for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("f_max must be >= f_min")


def _served(u: float) -> float:
    return min(1.0, max(0.0, u))


def power_consumption(state: DatacenterState, config: ProblemConfig) -> float:
    total = 0.0
    for pm in state.pms:
        if not state.powered_on(pm.pm_id):
            continue
        pmin = config.pmin_factor * pm.pmax
        u_cpu = _served(state.pm_utilization(pm.pm_id)[0])
        total += (pm.pmax - pmin) * u_cpu + pmin
    return total


def federation_cost(state: DatacenterState, config: ProblemConfig) -> float:
    return sum(state.vms[j].revenue * config.federation_factor
               for j in sorted(state.vms) if state.placement.get(j) == FEDERATED)


def economic_penalties(state: DatacenterState, config: ProblemConfig) -> float:
    """Revenue lost to unsatisfied demand on oversubscribed PMs.

    The shortfall on a resource is rationed in proportion to each hosted VM's
    actual use, so every VM on the PM sees the same unsatisfied ratio.
    """
    total = 0.0
    for pm in state.pms:
        hosted = sorted(state.hosted[pm.pm_id - 1])
        if not hosted:
            continue
        usage = state.pm_usage(pm.pm_id)
        for q in range(NUM_RESOURCES):
            if usage[q] <= pm.capacity[q]:
                continue
            ratio = (usage[q] - pm.capacity[q]) / usage[q]
            for j in hosted:
                total += state.vms[j].resource_revenue()[q] * ratio
    return total


def qos_violation_cost(state: DatacenterState, config: ProblemConfig) -> float:
    c = float(config.c_hat)
    return sum(c ** vm.sla * vm.sla
               for j, vm in sorted(state.vms.items()) if state.placement.get(j) == FEDERATED)


def wasted_resources(state: DatacenterState) -> float:
    wasted, on = 0.0, 0
    for pm in state.pms:
        if not state.powered_on(pm.pm_id):
            continue
        util = state.pm_utilization(pm.pm_id)
        wasted += 1.0 - sum(_served(u) for u in util) / NUM_RESOURCES
        on += 1
    return wasted / on if on else 0.0


def reconfiguration_overhead(plan) -> float:
    """Largest amount of RAM moved between one ordered pair of PMs."""
    if plan is None or not plan.transfer:
        return 0.0
    return max(plan.transfer.values())


def normalize(value: float, lower: float, upper: float) -> float:
    if upper <= lower:
        return 0.0
    return min(1.0, max(0.0, (value - lower) / (upper - lower)))


def compute_bounds(state: DatacenterState, config: ProblemConfig) -> ObjectiveBounds:
    """Analytic per-instant extremes used for normalization."""
    power_max = sum(pm.pmax for pm in state.pms)
    revenue = sum(vm.revenue for _, vm in sorted(state.vms.items()))
    money_max = revenue * max(config.federation_factor, 1.0)
    if config.objective_set == "part1":
        qos_max = float(config.c_hat) ** config.s * config.s * len(state.vms)
        upper = (power_max, money_max, qos_max, 1.0)
    else:
        ram_max = sum(vm.ram for _, vm in sorted(state.vms.items()))
        upper = (power_max, money_max, 1.0, ram_max)
    return ObjectiveBounds((0.0,) * 4, upper)


def raw_objectives(state: DatacenterState, config: ProblemConfig, plan=None) -> tuple:
    if config.objective_set == "part1":
        return (power_consumption(state, config), federation_cost(state, config),
                qos_violation_cost(state, config), wasted_resources(state))
    return (power_consumption(state, config),
            federation_cost(state, config) + economic_penalties(state, config),
            wasted_resources(state), reconfiguration_overhead(plan))


def evaluate(state: DatacenterState, config: ProblemConfig, plan=None) -> ObjectiveVector:
    raw = raw_objectives(state, config, plan)
    bounds = compute_bounds(state, config)
    norm = tuple(normalize(v, lo, hi) for v, lo, hi in zip(raw, bounds.lower, bounds.upper))
    return ObjectiveVector(raw, norm, OBJECTIVE_NAMES[config.objective_set])


def scalarize(values, method: str = "ws", weights: Optional[Sequence[float]] = None) -> float:
    """Collapse a normalized objective vector into one cost (lower is better)."""
    if isinstance(values, ObjectiveVector):
        values = values.normalized
    if method == "ws":
        if weights is None or len(weights) != len(values):
            raise ConfigError("weighted sum needs one weight per objective")
        return math.fsum(v * w for v, w in zip(values, weights))
    if method == "ed":
        return math.sqrt(math.fsum(v * v for v in values))
    if method == "cd":
        return max(abs(v) for v in values)
    raise ConfigError(f"unknown scalarization method {method!r}")


def cost(state: DatacenterState, config: ProblemConfig, plan=None) -> float:
    vec = evaluate(state, config, plan)
    return scalarize(vec, config.scalarizer, config.ws_weights)


def derive_ws_weights(samples) -> tuple:
    """Weights as N / (column sum of normalized costs) over N sampled solutions."""
    rows = [s.normalized if isinstance(s, ObjectiveVector) else tuple(s) for s in samples]
    if not rows:
        raise ValueError("need at least one sampled solution")
    n = len(rows)
    sums = [math.fsum(col) for col in zip(*rows)]
    if any(s <= 0 for s in sums):
        raise ValueError("an objective has zero total over the samples; weight undefined")
    return tuple(n / s for s in sums)
