"""Online placement heuristics: FF, BF, WF, FFD and BFD.

Single-VM functions only pick a location; the batch entry point
(:func:`place_batch`) commits each choice before looking at the next request.
"""
from __future__ import annotations

from .model import (FEDERATED, NUM_RESOURCES, REJECTED, DatacenterState,
                    PlacementError, ProblemConfig)

HEURISTICS = ("ff", "bf", "wf", "ffd", "bfd")


def pm_score(state: DatacenterState, pm_id: int) -> float:
    """Sum over resources of the unused ratio; an idle PM scores r."""
    if not state.powered_on(pm_id):
        return float(NUM_RESOURCES)
    return sum(1.0 - u for u in state.pm_utilization(pm_id))


def _fallback(vm, config: ProblemConfig) -> int:
    if config.federation:
        return FEDERATED
    if vm.sla >= config.s:
        raise PlacementError(f"VM {vm.vm_id} (sla={vm.sla}) fits on no PM and federation is disabled")
    return REJECTED


def _scan(vm, state, config, order) -> int:
    for pm_id in order:
        if state.fits(vm, pm_id):
            return pm_id
    return _fallback(vm, config)


def first_fit(vm, state: DatacenterState, config: ProblemConfig) -> int:
    return _scan(vm, state, config, range(1, state.n + 1))


def _by_score(state, descending: bool):
    scores = [(pm_score(state, i), i) for i in range(1, state.n + 1)]
    if descending:
        scores.sort(key=lambda x: (-x[0], x[1]))
    else:
        scores.sort()
    return [i for _, i in scores]


def best_fit(vm, state: DatacenterState, config: ProblemConfig) -> int:
    """Most utilized PM (lowest score) that still fits."""
    return _scan(vm, state, config, _by_score(state, descending=False))


def worst_fit(vm, state: DatacenterState, config: ProblemConfig) -> int:
    return _scan(vm, state, config, _by_score(state, descending=True))


def sort_decreasing(batch):
    """Requests by requested CPU, largest first; ties by vm_id."""
    return sorted(batch, key=lambda vm: (-vm.demand[0], vm.vm_id))


def _commit(batch, state, config, pick) -> dict:
    out = {}
    for vm in batch:
        loc = pick(vm, state, config)
        state.place(vm.vm_id, loc)
        out[vm.vm_id] = loc
    return out


def first_fit_decreasing(batch, state: DatacenterState, config: ProblemConfig) -> dict:
    return _commit(sort_decreasing(batch), state, config, first_fit)


def best_fit_decreasing(batch, state: DatacenterState, config: ProblemConfig) -> dict:
    return _commit(sort_decreasing(batch), state, config, best_fit)


_SINGLE = {"ff": first_fit, "bf": best_fit, "wf": worst_fit}


def place_batch(name: str, batch, state: DatacenterState, config: ProblemConfig) -> dict:
    """Place all requests of one instant with heuristic ``name``, mutating ``state``."""
    if name == "ffd":
        return first_fit_decreasing(batch, state, config)
    if name == "bfd":
        return best_fit_decreasing(batch, state, config)
    if name not in _SINGLE:
        raise ValueError(f"unknown heuristic {name!r}; expected one of {HEURISTICS}")
    return _commit(sorted(batch, key=lambda vm: vm.vm_id), state, config, _SINGLE[name])
