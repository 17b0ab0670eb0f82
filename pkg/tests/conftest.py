import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vmpsim.model import DatacenterState, PhysicalMachine, VirtualMachine  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def make_state(pm_specs, vm_specs, protection=(1.0, 1.0, 1.0), placement=None):
    """pm_specs: (cpu, ram, net, pmax); vm_specs: dicts passed to VirtualMachine."""
    pms = [PhysicalMachine(i + 1, *spec) for i, spec in enumerate(pm_specs)]
    state = DatacenterState(pms, protection=tuple(protection))
    for j, spec in enumerate(vm_specs):
        state.add_vm(VirtualMachine(j + 1, **spec))
    for vm_id, loc in (placement or {}).items():
        state.place(vm_id, loc)
    return state


def random_instance(rng, n, m, part2=False, placed=False, sla_max=4):
    """Small random instance as (pm_specs, vm_specs)."""
    pms = [(float(rng.integers(4, 11)), float(rng.integers(4, 11)), float(rng.integers(300, 1001)),
            float(rng.integers(500, 1001))) for _ in range(n)]
    vms = []
    for _ in range(m):
        spec = dict(demand=(float(rng.integers(1, 7)), float(rng.integers(1, 7)),
                            float(rng.integers(10, 500))),
                    revenue=float(np.round(rng.uniform(0.1, 1.5), 3)),
                    sla=int(rng.integers(1, sla_max + 1)))
        if part2:
            spec["utilization"] = tuple(float(x) for x in np.round(rng.uniform(0, 1, 3), 2))
            if rng.random() < 0.5:
                spec["rates"] = tuple(float(x) for x in np.round(rng.uniform(0.01, 0.2, 3), 3))
        vms.append(spec)
    return pms, vms


def oracle_vms(state):
    out = []
    for j in sorted(state.vms):
        vm = state.vms[j]
        out.append(dict(demand=vm.demand, util=vm.utilization, revenue=vm.revenue, sla=vm.sla,
                        rr=vm.resource_revenue(), res=state.reservation_of(j)))
    return out


def oracle_pms(state):
    return [(p.cpu, p.ram, p.net, p.pmax) for p in state.pms]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
