"""Datacenter state, problem configuration and constraint checking.

Locations are encoded as integers: a positive value is the id of the hosting
PM (ids run 1..n), ``FEDERATED`` (0) means the VM was leased from a federated
provider and ``REJECTED`` (-1) means it is not served at all.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

FEDERATED = 0
REJECTED = -1

RESOURCES = ("cpu", "ram", "net")
NUM_RESOURCES = len(RESOURCES)

# Part I weights were fitted empirically on 1000 sampled solutions; Part II
# weighs its four objectives equally.
PART1_WEIGHTS = (1.3903, 2.1379, 2.7393, 1.4586)
PART2_WEIGHTS = (0.25, 0.25, 0.25, 0.25)

_CAP_TOL = 1e-9


class ModelError(Exception):
    pass


class UnknownVm(ModelError):
    pass


class PlacementError(ModelError):
    """Raised when a VM with the highest SLA level cannot be served anywhere."""


class ConfigError(ModelError):
    pass


@dataclass(frozen=True)
class PhysicalMachine:
    pm_id: int
    cpu: float
    ram: float
    net: float
    pmax: float
    datacenter_id: int = 0

    def __post_init__(self):
        if min(self.cpu, self.ram, self.net, self.pmax) <= 0:
            raise ModelError(f"PM {self.pm_id}: capacities and pmax must be positive")

    @property
    def capacity(self) -> tuple:
        return (self.cpu, self.ram, self.net)


@dataclass(frozen=True)
class VirtualMachine:
    vm_id: int
    demand: tuple                      # Vr_k (ECU, GB, Mbps)
    revenue: float = 0.0               # R_j(t), USD
    sla: int = 1
    utilization: tuple = (1.0, 1.0, 1.0)   # Ur_k in [0, 1]
    service_id: int = 0
    datacenter_id: int = 0
    t_init: int = 0
    t_end: int = 0
    rates: Optional[tuple] = None      # per-unit revenue rates, if the trace has them

    def __post_init__(self):
        if len(self.demand) != NUM_RESOURCES or len(self.utilization) != NUM_RESOURCES:
            raise ModelError(f"VM {self.vm_id}: expected {NUM_RESOURCES} resources")
        if min(self.demand) < 0:
            raise ModelError(f"VM {self.vm_id}: negative demand")
        if any(u < 0 or u > 1 for u in self.utilization):
            raise ModelError(f"VM {self.vm_id}: utilization outside [0, 1]")
        if self.t_init > self.t_end:
            raise ModelError(f"VM {self.vm_id}: t_init > t_end")
        if self.sla < 1:
            raise ModelError(f"VM {self.vm_id}: sla must be >= 1")

    @property
    def ram(self) -> float:
        return self.demand[1]

    def resource_revenue(self) -> tuple:
        """Revenue attributed to each resource (Rr_q)."""
        if self.rates is not None:
            return tuple(d * r for d, r in zip(self.demand, self.rates))
        share = self.revenue / NUM_RESOURCES
        return (share,) * NUM_RESOURCES

    def effective_demand(self, protection: Sequence[float]) -> tuple:
        return effective_demand(self.demand, self.utilization, protection)


def effective_demand(demand, utilization, protection) -> tuple:
    """Used share plus the protected fraction of the idle share, per resource."""
    return tuple(d * u + d * (1.0 - u) * lam
                 for d, u, lam in zip(demand, utilization, protection))


@dataclass
class ProblemConfig:
    s: int = 4
    c_hat: float = 1000.0
    federation_factor: float = 0.7
    pmin_factor: float = 0.6
    protection: tuple = (1.0, 1.0, 1.0)
    objective_set: str = "part1"       # part1 | part2
    scalarizer: str = "ws"             # ws | ed | cd
    weights: Optional[tuple] = None    # WS weights; defaults per objective set
    federation: bool = True
    heuristic: str = "bfd"
    vmpr_period: Optional[int] = None  # None = never trigger
    vmpr_duration: int = 4
    migration_cpu_overhead: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        self.protection = tuple(float(x) for x in self.protection)
        if self.weights is not None:
            self.weights = tuple(float(w) for w in self.weights)
        if not 0.0 <= self.federation_factor <= 1.0:
            raise ConfigError("federation_factor must lie in [0, 1]")
        if len(self.protection) != NUM_RESOURCES or any(not 0.0 <= p <= 1.0 for p in self.protection):
            raise ConfigError("protection must hold one factor in [0, 1] per resource")
        if self.objective_set not in ("part1", "part2"):
            raise ConfigError(f"unknown objective_set {self.objective_set!r}")
        if self.scalarizer not in ("ws", "ed", "cd"):
            raise ConfigError(f"unknown scalarizer {self.scalarizer!r}")
        if self.scalarizer == "ws":
            w = self.ws_weights
            if len(w) != 4 or any(x <= 0 for x in w):
                raise ConfigError("WS needs four strictly positive weights")
        if self.s < 1:
            raise ConfigError("s must be >= 1")
        if self.vmpr_period is not None and self.vmpr_period <= 0:
            raise ConfigError("vmpr_period must be positive (or None for never)")
        if self.vmpr_duration < 1:
            raise ConfigError("vmpr_duration must be >= 1")

    @property
    def ws_weights(self) -> tuple:
        if self.weights is not None:
            return self.weights
        return PART1_WEIGHTS if self.objective_set == "part1" else PART2_WEIGHTS

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        data = dict(data)
        if data.get("vmpr_period") in ("inf", "never", math.inf):
            data["vmpr_period"] = None
        for key in ("protection", "weights"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)


# -- constraints -------------------------------------------------------------

def capacity_check(pm: PhysicalMachine, committed: Sequence[float], vm: VirtualMachine,
                   protection: Sequence[float]) -> bool:
    """True iff ``vm`` fits on ``pm`` on top of its ``committed`` load."""
    eff = vm.effective_demand(protection)
    return all(c + e <= cap + _CAP_TOL * max(1.0, cap)
               for c, e, cap in zip(committed, eff, pm.capacity))


@dataclass(frozen=True)
class Violation:
    kind: str            # unplaced | sla | capacity | unknown_pm
    vm_id: Optional[int] = None
    pm_id: Optional[int] = None
    resource: Optional[str] = None


def validate_placement(state: "DatacenterState", config: Optional[ProblemConfig] = None) -> list:
    config = config or ProblemConfig()
    out = []
    n = len(state.pms)
    for vm_id in sorted(state.vms):
        loc = state.placement.get(vm_id)
        if loc is None:
            out.append(Violation("unplaced", vm_id=vm_id))
        elif loc == REJECTED and state.vms[vm_id].sla >= config.s:
            out.append(Violation("sla", vm_id=vm_id))
        elif loc > n or loc < REJECTED:
            out.append(Violation("unknown_pm", vm_id=vm_id, pm_id=loc))
    for vm_id in sorted(set(state.placement) - set(state.vms)):
        out.append(Violation("unplaced", vm_id=vm_id))
    for pm in state.pms:
        load = [0.0] * NUM_RESOURCES
        for vm_id in sorted(state.hosted[pm.pm_id - 1]):
            for k, r in enumerate(state.reserved[vm_id]):
                load[k] += r
        for k, cap in enumerate(pm.capacity):
            if load[k] > cap + _CAP_TOL * max(1.0, cap):
                out.append(Violation("capacity", pm_id=pm.pm_id, resource=RESOURCES[k]))
    return out


# -- state -------------------------------------------------------------------

@dataclass
class DatacenterState:
    """Mutable datacenter state at one instant.

    ``reserved`` holds, for every VM hosted on a PM, the effective demand that
    was committed when it was admitted (or last resized). Utilization drift
    does not change reservations; it shows up as actual usage instead.
    """
    pms: list
    protection: tuple = (1.0, 1.0, 1.0)
    t: int = 0
    vms: dict = field(default_factory=dict)
    placement: dict = field(default_factory=dict)
    reserved: dict = field(default_factory=dict)
    hosted: list = None
    committed: list = None
    boosted: frozenset = frozenset()
    cpu_boost: float = 0.1
    _usage: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for i, pm in enumerate(self.pms):
            if pm.pm_id != i + 1:
                raise ModelError("PM ids must run 1..n in order")
        if self.hosted is None:
            self.hosted = [set() for _ in self.pms]
            self.committed = [(0.0,) * NUM_RESOURCES for _ in self.pms]
            for vm_id, loc in self.placement.items():
                if loc > 0:
                    self.hosted[loc - 1].add(vm_id)
                    self.reserved.setdefault(
                        vm_id, self.vms[vm_id].effective_demand(self.protection))
            for i in range(len(self.pms)):
                self._refresh(i + 1)

    @property
    def n(self) -> int:
        return len(self.pms)

    def copy(self) -> "DatacenterState":
        return DatacenterState(
            pms=self.pms, protection=self.protection, t=self.t,
            vms=dict(self.vms), placement=dict(self.placement),
            reserved=dict(self.reserved), hosted=[set(h) for h in self.hosted],
            committed=list(self.committed), boosted=self.boosted,
            cpu_boost=self.cpu_boost, _usage=dict(self._usage))

    def _refresh(self, pm_id: int):
        # fixed summation order keeps release/re-admit exactly reversible
        load = [0.0] * NUM_RESOURCES
        for vm_id in sorted(self.hosted[pm_id - 1]):
            for k, r in enumerate(self.reserved[vm_id]):
                load[k] += r
        self.committed[pm_id - 1] = tuple(load)
        self._usage.pop(pm_id, None)

    def fits(self, vm: VirtualMachine, pm_id: int) -> bool:
        return capacity_check(self.pms[pm_id - 1], self.committed[pm_id - 1], vm, self.protection)

    def room_for(self, reservation: Sequence[float], pm_id: int) -> bool:
        """Whether an already-committed reservation fits on ``pm_id`` as is."""
        pm = self.pms[pm_id - 1]
        return all(c + r <= cap + _CAP_TOL * max(1.0, cap)
                   for c, r, cap in zip(self.committed[pm_id - 1], reservation, pm.capacity))

    def reservation_of(self, vm_id: int) -> tuple:
        """Committed reservation if hosted, otherwise what admission would commit now."""
        got = self.reserved.get(vm_id)
        return got if got is not None else self.vms[vm_id].effective_demand(self.protection)

    # lifecycle ---------------------------------------------------------

    def add_vm(self, vm: VirtualMachine):
        if vm.vm_id in self.vms:
            raise ModelError(f"VM {vm.vm_id} already exists")
        self.vms[vm.vm_id] = vm

    def remove_vm(self, vm_id: int):
        if vm_id not in self.vms:
            raise UnknownVm(vm_id)
        self.unplace(vm_id)
        del self.vms[vm_id]

    def place(self, vm_id: int, loc: int, reservation: Optional[tuple] = None):
        """Assign a location. Capacity is the caller's responsibility."""
        if vm_id not in self.vms:
            raise UnknownVm(vm_id)
        self.unplace(vm_id)
        self.placement[vm_id] = loc
        if loc > 0:
            if reservation is None:
                reservation = self.vms[vm_id].effective_demand(self.protection)
            self.reserved[vm_id] = tuple(reservation)
            self.hosted[loc - 1].add(vm_id)
            self._refresh(loc)

    def unplace(self, vm_id: int) -> Optional[int]:
        loc = self.placement.pop(vm_id, None)
        if loc is not None and loc > 0:
            self.hosted[loc - 1].discard(vm_id)
            self.reserved.pop(vm_id, None)
            self._refresh(loc)
        return loc

    def set_utilization(self, vm_id: int, utilization: tuple):
        vm = self.vms.get(vm_id)
        if vm is None:
            raise UnknownVm(vm_id)
        self.vms[vm_id] = replace(vm, utilization=tuple(utilization))
        loc = self.placement.get(vm_id)
        if loc is not None and loc > 0:
            self._usage.pop(loc, None)

    def set_boosted(self, vm_ids):
        self.boosted = frozenset(vm_ids)
        self._usage.clear()

    def update_vm(self, vm: VirtualMachine) -> bool:
        """Replace a VM's attributes. Returns False if it was evicted from its PM.

        A demand change re-commits the reservation; when it no longer fits the
        VM is unplaced and must go through placement again.
        """
        old = self.vms.get(vm.vm_id)
        if old is None:
            raise UnknownVm(vm.vm_id)
        self.vms[vm.vm_id] = vm
        loc = self.placement.get(vm.vm_id)
        if loc is not None and loc > 0:
            self._usage.pop(loc, None)
        if loc is None or loc <= 0 or old.demand == vm.demand:
            return True
        pm_id = loc
        self.hosted[pm_id - 1].discard(vm.vm_id)
        self.reserved.pop(vm.vm_id)
        self._refresh(pm_id)
        if self.fits(vm, pm_id):
            self.hosted[pm_id - 1].add(vm.vm_id)
            self.reserved[vm.vm_id] = vm.effective_demand(self.protection)
            self._refresh(pm_id)
            return True
        del self.placement[vm.vm_id]
        return False

    # derived quantities -------------------------------------------------

    def vm_usage(self, vm_id: int) -> tuple:
        """Actual resource use Vr*Ur, including the migration CPU overhead."""
        vm = self.vms[vm_id]
        u = list(vm.utilization)
        if vm_id in self.boosted:
            u[0] = min(1.0, u[0] + self.cpu_boost)
        return tuple(d * x for d, x in zip(vm.demand, u))

    def pm_usage(self, pm_id: int) -> tuple:
        cached = self._usage.get(pm_id)
        if cached is not None:
            return cached
        load = [0.0] * NUM_RESOURCES
        for vm_id in sorted(self.hosted[pm_id - 1]):
            for k, x in enumerate(self.vm_usage(vm_id)):
                load[k] += x
        self._usage[pm_id] = load = tuple(load)
        return load

    def pm_utilization(self, pm_id: int) -> tuple:
        """Ur_{k,i}: actual use over capacity (may exceed 1 when overbooked)."""
        pm = self.pms[pm_id - 1]
        return tuple(x / c for x, c in zip(self.pm_usage(pm_id), pm.capacity))

    def powered_on(self, pm_id: int) -> bool:
        return bool(self.hosted[pm_id - 1])

    def placement_matrix(self) -> np.ndarray:
        ids = sorted(self.vms)
        mat = np.zeros((len(ids), self.n), dtype=np.int8)
        for row, vm_id in enumerate(ids):
            loc = self.placement.get(vm_id)
            if loc is not None and loc > 0:
                mat[row, loc - 1] = 1
        return mat


# -- lifecycle events --------------------------------------------------------

@dataclass(frozen=True)
class CreateVm:
    vm: VirtualMachine


@dataclass(frozen=True)
class DestroyVm:
    vm_id: int


@dataclass(frozen=True)
class ScaleVm:
    vm_id: int
    demand: tuple
    revenue: Optional[float] = None


@dataclass(frozen=True)
class UtilizationUpdate:
    vm_id: int
    utilization: tuple


def apply_event(state: DatacenterState, event) -> list:
    """Apply one lifecycle event; returns the VM ids that now need placement."""
    if isinstance(event, CreateVm):
        state.add_vm(event.vm)
        return [event.vm.vm_id]
    if isinstance(event, DestroyVm):
        state.remove_vm(event.vm_id)
        return []
    vm = state.vms.get(event.vm_id)
    if vm is None:
        raise UnknownVm(event.vm_id)
    if isinstance(event, ScaleVm):
        rev = vm.revenue if event.revenue is None else event.revenue
        ok = state.update_vm(replace(vm, demand=tuple(event.demand), revenue=rev))
        return [] if ok else [vm.vm_id]
    if isinstance(event, UtilizationUpdate):
        state.set_utilization(vm.vm_id, event.utilization)
        return []
    raise TypeError(f"unsupported event {event!r}")


# -- PM catalogs -------------------------------------------------------------

PM_COLUMNS = ("pm_id", "cpu", "ram", "net", "pmax", "datacenter_id")


def read_pm_catalog(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(PM_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: missing PM columns {sorted(missing)}")
        pms = [PhysicalMachine(int(row["pm_id"]), float(row["cpu"]), float(row["ram"]),
                               float(row["net"]), float(row["pmax"]),
                               int(row["datacenter_id"]))
               for row in reader]
    pms.sort(key=lambda p: p.pm_id)
    if [p.pm_id for p in pms] != list(range(1, len(pms) + 1)):
        raise ConfigError(f"{path}: pm_id must run 1..n")
    return pms


def write_pm_catalog(pms: Iterable[PhysicalMachine], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PM_COLUMNS)
        for p in pms:
            w.writerow([p.pm_id, _num(p.cpu), _num(p.ram), _num(p.net), _num(p.pmax), p.datacenter_id])


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def homogeneous_pms(count: int, cpu=8.0, ram=10.0, net=780.0, pmax=960.0) -> list:
    """A datacenter of identical PMs; defaults match the static-workload setup."""
    return [PhysicalMachine(i + 1, cpu, ram, net, pmax) for i in range(count)]


PM_TYPES = {
    "S": (32.0, 128.0, 1000.0, 800.0),
    "M": (64.0, 256.0, 1000.0, 1000.0),
    "L": (256.0, 512.0, 1000.0, 3000.0),
    "XL": (512.0, 1024.0, 20000.0, 5000.0),
}

LOAD_PROFILES = {
    "low": {"S": 50, "M": 50, "L": 50, "XL": 30},
    "high": {"S": 20, "M": 20, "L": 15, "XL": 8},
}


def pms_from_profile(profile, scale: float = 1.0) -> list:
    """Heterogeneous datacenter from PM-type counts (``low``/``high`` or a dict).

    ``scale`` shrinks the counts proportionally (at least one PM per type).
    """
    counts = LOAD_PROFILES[profile] if isinstance(profile, str) else profile
    pms = []
    for kind in ("S", "M", "L", "XL"):
        num = counts.get(kind, 0)
        if scale != 1.0 and num:
            num = max(1, int(round(num * scale)))
        for _ in range(num):
            cpu, ram, net, pmax = PM_TYPES[kind]
            pms.append(PhysicalMachine(len(pms) + 1, cpu, ram, net, pmax))
    return pms
