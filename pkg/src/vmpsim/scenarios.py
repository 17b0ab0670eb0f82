"""Scenario averaging, dominance checks and comparison tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence


def scenario_average(costs: Sequence[float]) -> float:
    """Mean scalarized cost over the steps of one run."""
    costs = list(getattr(costs, "costs", costs))
    if not costs:
        raise ValueError("run has no steps")
    return math.fsum(costs) / len(costs)


def cross_scenario_average(values: Sequence[float]) -> float:
    values = list(values)
    if not values:
        raise ValueError("no scenarios")
    return math.fsum(values) / len(values)


def _vec(x) -> tuple:
    return tuple(getattr(x, "normalized", x))


def pareto_dominates(a, b) -> bool:
    """Minimization dominance: no worse everywhere and strictly better somewhere."""
    a, b = _vec(a), _vec(b)
    if len(a) != len(b):
        raise ValueError("vectors of different length")
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def preferred(a, b) -> int:
    """-1 if ``a`` wins more objectives than ``b``, 1 if ``b`` does, 0 on a tie."""
    a, b = _vec(a), _vec(b)
    wins_a = sum(x < y for x, y in zip(a, b))
    wins_b = sum(y < x for x, y in zip(a, b))
    return -1 if wins_a > wins_b else 1 if wins_b > wins_a else 0


def non_dominated(vectors: dict) -> list:
    """Labels whose vector no other label dominates, in label order."""
    return [k for k in sorted(vectors)
            if not any(pareto_dominates(vectors[o], vectors[k]) for o in vectors if o != k)]


@dataclass
class MethodResult:
    """Per-scenario averages of one method.

    Scenario keys are free-form; a ``"<trace>@<load>"`` key lets tables group
    scenarios by load profile.
    """
    label: str
    scenario_costs: dict = field(default_factory=dict)        # scenario -> mean F
    scenario_objectives: dict = field(default_factory=dict)   # scenario -> mean normalized vector

    @property
    def overall(self) -> float:
        return cross_scenario_average(self.scenario_costs[k] for k in sorted(self.scenario_costs))

    def objective_means(self, scenarios: Optional[Sequence[str]] = None) -> tuple:
        keys = sorted(self.scenario_objectives) if scenarios is None else list(scenarios)
        rows = [self.scenario_objectives[k] for k in keys]
        return tuple(math.fsum(col) / len(rows) for col in zip(*rows))


def load_of(scenario: str) -> str:
    return scenario.rsplit("@", 1)[1] if "@" in scenario else "all"


@dataclass
class Table:
    title: str
    header: list
    rows: list                      # each row: list of cells (str or float)
    best: set = field(default_factory=set)   # (row, col) cells to mark

    def _cell(self, r: int, c: int) -> str:
        v = self.rows[r][c]
        text = f"{v:.6f}" if isinstance(v, float) else str(v)
        return text + ("*" if (r, c) in self.best else "")

    def to_text(self) -> str:
        cells = [list(map(str, self.header))]
        cells += [[self._cell(r, c) for c in range(len(row))] for r, row in enumerate(self.rows)]
        widths = [max(len(row[c]) for row in cells) for c in range(len(self.header))]
        lines = [self.title, ""]
        for i, row in enumerate(cells):
            lines.append("  ".join(x.ljust(w) if j == 0 else x.rjust(w)
                                   for j, (x, w) in enumerate(zip(row, widths))).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        lines.append("(* best in column)" if self.best else "")
        return "\n".join(lines).rstrip() + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r, row in enumerate(self.rows):
            w.writerow([repr(v) if isinstance(v, float) else v for v in row]
                       + [";".join(str(c) for rr, c in sorted(self.best) if rr == r)])
        return buf.getvalue()


def ranking(results: Sequence[MethodResult]) -> list:
    """Labels ordered by cross-scenario mean; ties go to the smaller label."""
    return [r.label for r in sorted(results, key=lambda r: (r.overall, r.label))]


def _mark_min(rows: list, best: set, row_idx: Sequence[int], cols: Sequence[int]):
    for r in row_idx:
        vals = [rows[r][c] for c in cols]
        lo = min(vals)
        best.update((r, c) for c, v in zip(cols, vals) if v == lo)


def build_report(results: Sequence[MethodResult], objective_names: Sequence[str]) -> dict:
    """Comparison tables keyed ``combined``, ``objectives`` and ``scalarization``."""
    results = sorted(results, key=lambda r: r.label)
    labels = [r.label for r in results]
    scenarios = sorted({s for r in results for s in r.scenario_costs})
    for r in results:
        if set(r.scenario_costs) != set(scenarios):
            raise ValueError(f"{r.label} was not run on every scenario")

    # scenarios x methods, plus average and rank rows
    rows = [[s] + [r.scenario_costs[s] for r in results] for s in scenarios]
    rows.append(["average"] + [r.overall for r in results])
    best = set()
    cols = range(1, len(labels) + 1)
    _mark_min(rows, best, range(len(rows)), cols)
    order = ranking(results)
    rows.append(["rank"] + [order.index(lbl) + 1 for lbl in labels])
    combined = Table("Average scalarized cost per scenario", ["scenario"] + labels, rows, best)

    # objectives x methods, averaged over all scenarios
    rows = []
    with_objectives = all(r.scenario_objectives for r in results)
    if with_objectives:
        means = [r.objective_means() for r in results]
        rows = [[name] + [m[i] for m in means] for i, name in enumerate(objective_names)]
    best = set()
    _mark_min(rows, best, range(len(rows)), cols)
    objectives = Table("Average normalized objective per method", ["objective"] + labels, rows, best)

    # (objective, load) x methods, with the scalarized cost as a final objective
    rows = []
    loads = sorted({load_of(s) for s in scenarios})
    for load in loads:
        keys = [s for s in scenarios if load_of(s) == load]
        if with_objectives:
            means = [r.objective_means(keys) for r in results]
            rows += [[f"{name} @ {load}"] + [m[i] for m in means]
                     for i, name in enumerate(objective_names)]
        rows.append([f"F @ {load}"] + [math.fsum(r.scenario_costs[k] for k in keys) / len(keys)
                                        for r in results])
    best = set()
    _mark_min(rows, best, range(len(rows)), cols)
    scalarization = Table("Objectives by load profile and method", ["objective @ load"] + labels,
                          rows, best)
    return {"combined": combined, "objectives": objectives, "scalarization": scalarization}
