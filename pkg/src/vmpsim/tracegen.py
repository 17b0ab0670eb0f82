"""Cloud workload trace generation and the trace CSV format.

A trace is a list of VM snapshots: one row per living VM per time step,
carrying the VM's current instance size, utilization (percent) and per-unit
revenue rates. ``t_end`` is exclusive: a VM has snapshots for
``t_init <= t < t_end``.
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Union

import numpy as np

COLUMNS = ("t", "b", "c", "v", "cpu", "ram", "net", "u_cpu", "u_ram", "u_net",
           "r_cpu", "r_ram", "r_net", "t_init", "t_end")
# Part I workloads also carry an SLA level as a trailing 16th column.
SLA_COLUMN = "sla"
_INT_COLUMNS = {"t", "b", "c", "v", "t_init", "t_end", "sla"}


class TraceSchemaError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class TraceEvent:
    t: int
    b: int              # service
    c: int              # datacenter
    v: int              # VM index within the service
    cpu: float
    ram: float
    net: float
    u_cpu: float        # percent
    u_ram: float
    u_net: float
    r_cpu: float        # USD per unit of resource
    r_ram: float
    r_net: float
    t_init: int
    t_end: int
    sla: Optional[int] = None

    @property
    def key(self) -> tuple:
        return (self.b, self.c, self.v)

    @property
    def revenue(self) -> float:
        return self.cpu * self.r_cpu + self.ram * self.r_ram + self.net * self.r_net


# -- probability distributions ----------------------------------------------

@dataclass(frozen=True)
class Uniform:
    a: int
    b: int

    def __post_init__(self):
        if self.a > self.b:
            raise ValueError(f"Uniform({self.a}, {self.b}): a must be <= b")

    def __str__(self):
        return f"Uniform({self.a},{self.b})"


@dataclass(frozen=True)
class Poisson:
    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("Poisson rate must be positive")

    def __str__(self):
        return f"Poisson({self.lam:g})"


_PDF_RE = re.compile(r"^\s*(uniform|poisson)\s*\(\s*(?:lambda\s*=\s*)?([^,)]+)\s*(?:,\s*([^)]+))?\)\s*$",
                     re.IGNORECASE)


def parse_pdf(spec) -> Union[Uniform, Poisson]:
    """Accepts ``"Uniform(0,10)"``, ``"Poisson(7)"`` or ``{"pdf": ..., ...}``."""
    if isinstance(spec, (Uniform, Poisson)):
        return spec
    if isinstance(spec, dict):
        kind = spec.get("pdf", "").lower()
        if kind == "uniform":
            return Uniform(int(spec["a"]), int(spec["b"]))
        if kind == "poisson":
            return Poisson(float(spec.get("lam", spec.get("lambda"))))
        raise ValueError(f"unknown pdf spec {spec!r}")
    m = _PDF_RE.match(str(spec))
    if not m:
        raise ValueError(f"cannot parse pdf {spec!r}")
    if m.group(1).lower() == "uniform":
        if m.group(3) is None:
            raise ValueError(f"Uniform needs two bounds: {spec!r}")
        return Uniform(int(float(m.group(2))), int(float(m.group(3))))
    return Poisson(float(m.group(2)))


def sample(pdf, rng: np.random.Generator) -> int:
    """Integer draw: uniform on [a, b] inclusive, or a Poisson variate.

    Poisson draws use numpy's generator (inversion for small rates, the
    PTRS transformed-rejection method otherwise).
    """
    if isinstance(pdf, Uniform):
        return int(rng.integers(pdf.a, pdf.b + 1))
    if isinstance(pdf, Poisson):
        return int(rng.poisson(pdf.lam))
    raise TypeError(f"not a pdf: {pdf!r}")


# -- generator parameters ------------------------------------------------------

@dataclass(frozen=True)
class InstanceType:
    name: str
    cpu: float
    ram: float
    net: float

    def __post_init__(self):
        if min(self.cpu, self.ram, self.net) <= 0:
            raise ValueError(f"instance type {self.name}: resources must be positive")


# AWS-style sizes ordered by ECU; vertical elasticity walks this list.
DEFAULT_INSTANCE_TYPES = (
    InstanceType("m1.small", 1, 1.7, 100),
    InstanceType("m3.medium", 3, 3.75, 300),
    InstanceType("m3.large", 6.5, 7.5, 500),
    InstanceType("c3.large", 7, 3.75, 500),
    InstanceType("m3.xlarge", 13, 15, 700),
    InstanceType("c3.xlarge", 14, 7.5, 700),
    InstanceType("m3.2xlarge", 26, 30, 1000),
    InstanceType("c3.2xlarge", 28, 15, 1000),
    InstanceType("r3.4xlarge", 52, 122, 1000),
    InstanceType("c3.4xlarge", 55, 30, 1000),
    InstanceType("c3.8xlarge", 108, 60, 10000),
)


@dataclass
class GeneratorParams:
    duration: int = 10
    num_datacenters: int = 1
    num_services: int = 2
    max_vms_per_service: int = 5
    instance_types: tuple = DEFAULT_INSTANCE_TYPES
    horizontal_elasticity: object = Uniform(5, 5)
    vertical_elasticity: object = Uniform(1, 1)
    server_util: object = Uniform(100, 100)
    network_util: object = Uniform(100, 100)
    rates: tuple = (0.065, 0.016, 0.179)
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("horizontal_elasticity", "vertical_elasticity", "server_util", "network_util"):
            setattr(self, name, parse_pdf(getattr(self, name)))
        types = tuple(t if isinstance(t, InstanceType) else InstanceType(**t)
                      for t in self.instance_types)
        if not types:
            raise ValueError("instance type catalog is empty")
        if any(a.cpu > b.cpu for a, b in zip(types, types[1:])):
            raise ValueError("instance types must be ordered by cpu ascending")
        self.instance_types = types
        self.rates = tuple(float(r) for r in self.rates)
        if self.duration < 0 or self.num_services < 0 or self.max_vms_per_service < 0:
            raise ValueError("duration, num_services and max_vms_per_service must be >= 0")
        if self.num_datacenters < 1:
            raise ValueError("need at least one datacenter")

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorParams":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown generator keys: {sorted(extra)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("horizontal_elasticity", "vertical_elasticity", "server_util", "network_util"):
            d[name] = str(getattr(self, name))
        d["instance_types"] = [asdict(t) for t in self.instance_types]
        d["rates"] = list(self.rates)
        return d


def static_params(**overrides) -> GeneratorParams:
    """The no-elasticity, no-overbooking example configuration."""
    base = dict(duration=10, num_datacenters=1, num_services=2, max_vms_per_service=5,
                instance_types=(InstanceType("m3.large", 6, 8, 450),),
                horizontal_elasticity="Uniform(5,5)", vertical_elasticity="Uniform(1,1)",
                server_util="Uniform(100,100)", network_util="Uniform(100,100)")
    base.update(overrides)
    return GeneratorParams(**base)


def elastic_params(variant: int = 0, duration: int = 1000, **overrides) -> GeneratorParams:
    """The overbooking + elasticity experiment configuration.

    ``variant`` is a 4-bit mask choosing, for horizontal elasticity, vertical
    elasticity, server and network utilization respectively, the Poisson
    (bit set) or Uniform (bit clear) distribution.
    """
    choices = (("Uniform(0,10)", "Poisson(7)"), ("Uniform(0,10)", "Poisson(5)"),
               ("Uniform(0,100)", "Poisson(70)"), ("Uniform(0,100)", "Poisson(70)"))
    picked = [pair[(variant >> bit) & 1] for bit, pair in enumerate(choices)]
    base = dict(duration=duration, num_datacenters=1, num_services=100, max_vms_per_service=10,
                horizontal_elasticity=picked[0], vertical_elasticity=picked[1],
                server_util=picked[2], network_util=picked[3])
    base.update(overrides)
    return GeneratorParams(**base)


# -- generation ----------------------------------------------------------------

@dataclass
class _Vm:
    v: int
    t_init: int
    t_end: Optional[int] = None


@dataclass
class Service:
    b: int
    c: int
    start: int
    end: int                      # exclusive
    vms: list = field(default_factory=list)
    next_v: int = 0

    def living(self) -> list:
        return [vm for vm in self.vms if vm.t_end is None]


def _clamp(x, lo, hi):
    return lo if x < lo else hi if x > hi else x


def generate_vms_for_service(service: Service, target_qty: int, t: int,
                             rng: np.random.Generator, params: GeneratorParams, out: list):
    """Reconcile the service's living VMs with ``target_qty`` and snapshot them.

    Snapshots are appended to ``out`` as ``(t, vm, instance, u_cpu, u_ram, u_net)``
    tuples; the final ``t_end`` is only known once generation completes.
    """
    while len(service.living()) > target_qty:
        living = service.living()
        living[int(rng.integers(len(living)))].t_end = t
    while len(service.living()) < target_qty:
        service.vms.append(_Vm(service.next_v, t))
        service.next_v += 1
    last = len(params.instance_types) - 1
    for vm in service.living():
        inst = params.instance_types[_clamp(sample(params.vertical_elasticity, rng), 0, last)]
        u_cpu = _clamp(sample(params.server_util, rng), 0, 100)
        u_ram = _clamp(sample(params.server_util, rng), 0, 100)
        u_net = _clamp(sample(params.network_util, rng), 0, 100)
        out.append((t, service, vm, inst, u_cpu, u_ram, u_net))


def init_services(params: GeneratorParams, rng: np.random.Generator) -> list:
    services = []
    for b in range(params.num_services):
        start = int(rng.integers(params.duration))
        end = start + int(rng.integers(1, params.duration - start + 1))
        c = int(rng.integers(params.num_datacenters))
        services.append(Service(b, c, start, end))
    return services


def generate(params: GeneratorParams) -> list:
    """Generate a trace; a pure function of ``params`` (including its seed)."""
    if params.duration == 0:
        return []
    rng = np.random.default_rng(params.rng_seed)
    services = init_services(params, rng)
    snaps = []
    for t in range(params.duration):
        for svc in services:
            if svc.start <= t < svc.end:
                target = _clamp(sample(params.horizontal_elasticity, rng), 0, params.max_vms_per_service)
                generate_vms_for_service(svc, target, t, rng, params, snaps)
    for svc in services:
        for vm in svc.vms:
            if vm.t_end is None:
                vm.t_end = svc.end
    r_cpu, r_ram, r_net = params.rates
    events = [TraceEvent(t, svc.b, svc.c, vm.v, float(inst.cpu), float(inst.ram), float(inst.net),
                         float(uc), float(ur), float(un), r_cpu, r_ram, r_net, vm.t_init, vm.t_end)
              for t, svc, vm, inst, uc, ur, un in snaps]
    events.sort(key=lambda e: (e.t, e.b, e.c, e.v))
    return events


@dataclass
class LegacyParams:
    """Part I workloads: single-VM services, no elasticity, full utilization."""
    duration: int = 100
    num_vms: int = 100
    cpu: tuple = (1, 8)
    ram: tuple = (1, 8)
    net: tuple = (10, 1000)
    revenue: tuple = (0.1, 1.5)
    sla: tuple = (1, 5)


def legacy_workload(kind, params: Optional[LegacyParams] = None,
                    rng: Optional[np.random.Generator] = None) -> list:
    """VM arrivals drawn from ``kind`` (a pdf or e.g. ``"Poisson(10)"``).

    Lifetimes are uniform over ``[1, duration - t_init]``. Revenue is folded
    into equal per-resource rates so that the rate columns reproduce it.
    """
    params = params or LegacyParams()
    rng = rng if rng is not None else np.random.default_rng(0)
    pdf = parse_pdf(kind)
    events = []
    for j in range(params.num_vms):
        t0 = _clamp(sample(pdf, rng), 0, params.duration - 1)
        t1 = t0 + int(rng.integers(1, params.duration - t0 + 1))
        cpu = float(rng.integers(params.cpu[0], params.cpu[1] + 1))
        ram = float(rng.integers(params.ram[0], params.ram[1] + 1))
        net = float(rng.integers(params.net[0], params.net[1] + 1))
        revenue = float(rng.uniform(*params.revenue))
        sla = int(rng.integers(params.sla[0], params.sla[1] + 1))
        rates = (revenue / 3 / cpu, revenue / 3 / ram, revenue / 3 / net)
        for t in range(t0, t1):
            events.append(TraceEvent(t, j, 0, 0, cpu, ram, net, 100.0, 100.0, 100.0,
                                     *rates, t0, t1, sla))
    events.sort(key=lambda e: (e.t, e.b, e.c, e.v))
    return events


PART1_WORKLOADS = {"W1": "Poisson(10)", "W2": "Poisson(50)", "W3": "Poisson(70)",
                   "W4": "Uniform(0,100)"}


# -- CSV -------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, int):
        return str(x)
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_csv(events) -> bytes:
    events = list(events)
    with_sla = any(e.sla is not None for e in events)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS + ((SLA_COLUMN,) if with_sla else ()))
    for e in events:
        row = [_fmt(getattr(e, col)) for col in COLUMNS]
        if with_sla:
            row.append("" if e.sla is None else str(e.sla))
        w.writerow(row)
    return buf.getvalue().encode()


def parse_csv(data) -> list:
    text = data.decode() if isinstance(data, (bytes, bytearray)) else data
    events = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if lineno == 1 and row[0].strip() == "t":
            if tuple(c.strip() for c in row[:15]) != COLUMNS:
                raise TraceSchemaError(lineno, "unexpected header")
            continue
        if len(row) not in (15, 16):
            raise TraceSchemaError(lineno, f"expected 15 columns, found {len(row)}")
        names = COLUMNS + ((SLA_COLUMN,) if len(row) == 16 else ())
        values = {}
        for name, cell in zip(names, row):
            cell = cell.strip()
            if name == SLA_COLUMN and cell == "":
                values[name] = None
                continue
            try:
                values[name] = int(cell) if name in _INT_COLUMNS else float(cell)
            except ValueError:
                raise TraceSchemaError(lineno, f"column {name}: non-numeric value {cell!r}") from None
        for name in ("u_cpu", "u_ram", "u_net"):
            if not 0.0 <= values[name] <= 100.0:
                raise TraceSchemaError(lineno, f"{name}={values[name]} outside [0, 100]")
        if values["t_init"] > values["t_end"]:
            raise TraceSchemaError(lineno, "t_init > t_end")
        events.append(TraceEvent(**values))
    return events


def read_trace(path) -> list:
    with open(path, "rb") as fh:
        return parse_csv(fh.read())
