"""Command-line entry point: ``vmpsim gen-trace | run | compare``."""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .memetic import MaParams
from .model import (ConfigError, ModelError, PlacementError, ProblemConfig, homogeneous_pms,
                    pms_from_profile, read_pm_catalog)
from .objectives import OBJECTIVE_NAMES
from .scenarios import MethodResult, build_report, scenario_average
from .tracegen import (GeneratorParams, LegacyParams, TraceSchemaError, generate, legacy_workload,
                       read_trace, write_csv)
from .twophase import ALGORITHMS, run_simulation

EXIT_OK, EXIT_USAGE, EXIT_SCHEMA, EXIT_INFEASIBLE = 0, 1, 2, 3
DEFAULT_VMPR_PERIOD = 10
LOAD_CHOICES = ("low", "high", "homogeneous")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _atomic_write(path: Path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _write_all(files: dict):
    """Write every output only once all of them have been computed."""
    for path, data in files.items():
        _atomic_write(path, data)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


# -- gen-trace -------------------------------------------------------------------

def cmd_gen_trace(args) -> dict:
    """Trace from generator parameters, or a single-VM-service workload when the
    config has a ``workload`` key (e.g. ``"Poisson(10)"``)."""
    data = _load_json(args.config)
    try:
        if "workload" in data:
            data = dict(data)
            kind = data.pop("workload")
            seed = data.pop("rng_seed", 0) if args.seed is None else args.seed
            data.pop("rng_seed", None)
            params = LegacyParams(**data)
            events = legacy_workload(kind, params, np.random.default_rng(seed))
            manifest = {"workload": kind, "rng_seed": seed, **vars(params)}
        else:
            params = GeneratorParams.from_dict(data)
            if args.seed is not None:
                params = replace(params, rng_seed=args.seed)
            events = generate(params)
            manifest = params.to_dict()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{args.config}: {exc}") from None
    out = Path(args.out)
    return {out: write_csv(events), out.with_name(out.name + ".params.json"): _dumps(manifest)}


# -- run ---------------------------------------------------------------------------

def _pms(args):
    if args.pms:
        return read_pm_catalog(args.pms), Path(args.pms).stem
    profile = args.load_profile or "homogeneous"
    if profile == "homogeneous":
        return homogeneous_pms(10), profile
    return pms_from_profile(profile), profile


def _run_config(args):
    data = _load_json(args.config) if args.config else {}
    data = dict(data)
    ma = MaParams.from_dict(data.pop("ma", {}))
    t_max = data.pop("t_max", None)
    if args.scalarizer:
        data["scalarizer"] = args.scalarizer
    if args.algo in ("ff", "bf", "wf", "ffd", "bfd"):
        data["heuristic"] = args.algo
        data["vmpr_period"] = None
    elif args.algo == "two-phase":
        # an explicit "inf" is kept so the degenerate scheme can be run
        data.setdefault("vmpr_period", DEFAULT_VMPR_PERIOD)
    else:
        data["vmpr_period"] = None
    config = ProblemConfig.from_dict(data)
    if args.t_max is not None:
        t_max = args.t_max
    return config, ma, t_max


def _steps_csv(run) -> str:
    names = run.objective_names
    lines = [",".join(["t"] + [f"{n}_raw" for n in names] + [f"{n}_norm" for n in names] + ["F"])]
    for r in run.records:
        lines.append(",".join([str(r.t)] + [repr(float(v)) for v in r.raw]
                              + [repr(float(v)) for v in r.normalized] + [repr(float(r.cost))]))
    return "\n".join(lines) + "\n"


def _summary(run, seed: int) -> dict:
    return {"seed": seed, "steps": len(run.records),
            "mean_cost": scenario_average(run.costs) if run.records else 0.0,
            "mean_normalized": list(run.mean_normalized()), "mean_raw": list(run.mean_raw()),
            "migrations": run.migrations, "migrated_gb": run.migrated_gb,
            "vmpr_jobs": run.jobs, "adoptions": run.adoptions}


def cmd_run(args) -> dict:
    config, ma, t_max = _run_config(args)
    trace = read_trace(args.trace)
    pms, pm_label = _pms(args)
    seeds = [args.seed + k for k in range(args.seeds)]
    algorithm = "ma" if args.algo == "ma" else "online"
    out = Path(args.out)
    files, runs, timings = {}, [], {}
    for seed in seeds:
        cfg = replace(config, rng_seed=seed)
        run = run_simulation(trace, pms, cfg, t_max=t_max, ma_params=ma, algorithm=algorithm,
                             executor=args.executor)
        name = "steps.csv" if len(seeds) == 1 else f"steps-seed{seed}.csv"
        files[out / name] = _steps_csv(run)
        runs.append(_summary(run, seed))
        timings[str(seed)] = {k: round(v * 1000.0, 3) for k, v in run.timings.items()}
    summary = {
        "algo": args.algo, "scalarizer": config.scalarizer,
        "objective_set": config.objective_set,
        "objective_names": list(OBJECTIVE_NAMES[config.objective_set]),
        "scenario": f"{Path(args.trace).stem}@{pm_label}",
        "runs": runs,
        "mean_cost": float(np.mean([r["mean_cost"] for r in runs])),
        "mean_normalized": [float(x) for x in np.mean([r["mean_normalized"] for r in runs], axis=0)],
    }
    files[out / "summary.json"] = _dumps(summary)
    if args.timings:
        files[out / "timings.json"] = _dumps({"wall_ms_per_phase": timings})
    return files


# -- compare -----------------------------------------------------------------------

def _label(summary: dict, by: str) -> str:
    if by == "algo":
        return summary["algo"]
    if by == "scalarizer":
        return summary["scalarizer"]
    return f"{summary['algo']}/{summary['scalarizer']}"


def cmd_compare(args) -> dict:
    summaries = [_load_json(Path(d) / "summary.json") for d in args.runs]
    sets = {s["objective_set"] for s in summaries}
    if len(sets) != 1:
        raise ConfigError(f"runs mix objective sets {sorted(sets)}; compare one set at a time")
    by = args.label_by
    if by == "auto":
        algos = {s["algo"] for s in summaries}
        scal = {s["scalarizer"] for s in summaries}
        by = "scalarizer" if len(algos) == 1 and len(scal) > 1 else "algo" if len(scal) == 1 else "both"
    methods = {}
    for s in summaries:
        m = methods.setdefault(_label(s, by), MethodResult(_label(s, by)))
        if s["scenario"] in m.scenario_costs:
            raise ConfigError(f"duplicate run for {m.label} on {s['scenario']}")
        m.scenario_costs[s["scenario"]] = s["mean_cost"]
        m.scenario_objectives[s["scenario"]] = tuple(s["mean_normalized"])
    try:
        tables = build_report(list(methods.values()), summaries[0]["objective_names"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    files = {}
    for name, table in tables.items():
        files[out / f"{name}.txt"] = table.to_text()
        files[out / f"{name}.csv"] = table.to_csv()
    return files


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vmpsim", description="VM placement simulation and optimization")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-trace", help="generate a workload trace CSV")
    g.add_argument("--config", required=True, help="generator parameters (JSON)")
    g.add_argument("--seed", type=int, help="overrides rng_seed from the config")
    g.add_argument("--out", required=True, help="output CSV path")

    r = sub.add_parser("run", help="simulate one trace")
    r.add_argument("--trace", required=True)
    r.add_argument("--config", help="problem config (JSON); optional 'ma' and 't_max' keys")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--pms", help="PM catalog CSV")
    src.add_argument("--load-profile", choices=LOAD_CHOICES,
                     help="built-in datacenter (default: 10 homogeneous PMs)")
    r.add_argument("--algo", required=True, choices=ALGORITHMS)
    r.add_argument("--scalarizer", choices=("ws", "ed", "cd"))
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--seeds", type=int, default=1, help="repeat with seeds seed..seed+N-1")
    r.add_argument("--t-max", type=int, dest="t_max")
    r.add_argument("--executor", choices=("inline", "thread"), default="inline")
    r.add_argument("--timings", action="store_true", help="also write wall-clock timings")
    r.add_argument("--out", required=True, help="output directory")

    c = sub.add_parser("compare", help="build comparison tables from run directories")
    c.add_argument("--runs", nargs="+", required=True, help="directories written by 'run'")
    c.add_argument("--label-by", choices=("auto", "algo", "scalarizer", "both"), default="auto")
    c.add_argument("--out", required=True)
    return p


COMMANDS = {"gen-trace": cmd_gen_trace, "run": cmd_run, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seeds", 1) < 1:
        print("vmpsim: error: --seeds must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        files = COMMANDS[args.command](args)
        _write_all(files)
    except PlacementError as exc:
        print(f"vmpsim: infeasible instance: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, TraceSchemaError, ModelError, ValueError, OSError) as exc:
        print(f"vmpsim: error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
