"""End-to-end acceptance checks, one test per criterion.

Each test appends a ``CRITERION k: PASS/FAIL`` line that the terminal summary
prints, then asserts.
"""
import hashlib
import json
import time
from dataclasses import replace

import numpy as np

import oracle
from conftest import ACCEPTANCE_LINES, make_state, oracle_pms, oracle_vms, random_instance
from vmpsim.cli import main
from vmpsim.heuristics import HEURISTICS, place_batch
from vmpsim.memetic import MaParams, Problem, evolve, repair
from vmpsim.model import (DatacenterState, ModelError, ProblemConfig, apply_event, homogeneous_pms,
                          pms_from_profile, validate_placement)
from vmpsim.objectives import derive_ws_weights
from vmpsim.scenarios import (MethodResult, build_report, cross_scenario_average, non_dominated,
                              pareto_dominates, preferred, scenario_average)
from vmpsim.tracegen import (PART1_WORKLOADS, LegacyParams, Poisson, elastic_params, generate,
                             legacy_workload, parse_csv, sample, static_params, write_csv)
from vmpsim import twophase
from vmpsim.twophase import _Replay, run_simulation

PART1_WEIGHTS = (1.3903, 2.1379, 2.7393, 1.4586)
P2_BASE = ProblemConfig(objective_set="part2", weights=(0.25,) * 4, protection=(0.75,) * 3,
                        heuristic="bfd")
SCENARIO_VARIANTS = (0, 3, 5, 6, 9, 10, 12, 15)
TWO_PHASE_MA = MaParams(population_size=30, generations=30)


def report(k, ok, detail):
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def _cfg_dict(cfg):
    return dict(federation=cfg.federation, s=cfg.s, c_hat=cfg.c_hat,
                part2=cfg.objective_set == "part2")


def _scenario(k, v, duration=200):
    trace = generate(elastic_params(variant=v, duration=duration, rng_seed=100 + v))
    profile = "low" if k % 2 == 0 else "high"
    return f"v{v}@{profile}", trace, pms_from_profile(profile)


# -- 1 ------------------------------------------------------------------------------

def test_criterion_1_brute_force_optimum():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    hits = runs = 0
    heuristic_errors = []
    for inst in range(50):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 6))
        part2 = inst % 2 == 1
        pms, vms = random_instance(rng, n, m, part2=part2)
        for method in ("ws", "ed", "cd"):
            cfg = ProblemConfig(objective_set="part2" if part2 else "part1", scalarizer=method,
                                weights=(0.25,) * 4 if part2 else None)
            state = make_state(pms, vms, protection=(0.75,) * 3 if part2 else (1,) * 3)
            if part2:
                # a live incumbent makes the migration objective matter
                place_batch("ff", [state.vms[j] for j in sorted(state.vms)], state, cfg)
            p = Problem(state, cfg)
            inc = p.incumbent.tolist() if part2 else None
            best, feasible = oracle.brute_force(oracle_pms(state), oracle_vms(state), _cfg_dict(cfg),
                                                method, cfg.ws_weights, inc)
            got = p.encode(evolve(state, MaParams(population_size=50, generations=200,
                                                  rng_seed=inst), cfg))
            runs += 1
            if tuple(got.tolist()) in feasible and abs(feasible[tuple(got.tolist())] - best) <= 1e-9:
                hits += 1
            if method == "ws":
                for h in HEURISTICS:
                    fresh = make_state(pms, vms, protection=state.protection)
                    place_batch(h, [fresh.vms[j] for j in sorted(fresh.vms)], fresh, cfg)
                    genes = tuple(max(fresh.placement[j], 0) for j in sorted(fresh.vms))
                    if genes not in feasible or validate_placement(fresh, cfg):
                        heuristic_errors.append((inst, h))
    elapsed = time.perf_counter() - start
    rate = hits / runs
    ok = rate >= 0.95 and not heuristic_errors and elapsed < 120
    report(1, ok, f"MA optimal in {hits}/{runs} runs ({rate:.1%}); heuristic violations "
                  f"{len(heuristic_errors)}; {elapsed:.1f}s")
    assert ok


# -- 2 ------------------------------------------------------------------------------

def test_criterion_2_memetic_beats_heuristics():
    start = time.perf_counter()
    cfg = ProblemConfig(s=5)
    pms = homogeneous_pms(10)
    params = MaParams(population_size=30, generations=30)
    rows, ok = [], True
    for idx, (name, kind) in enumerate(sorted(PART1_WORKLOADS.items())):
        trace = legacy_workload(kind, LegacyParams(), np.random.default_rng(idx + 1))
        heur = {h: scenario_average(run_simulation(trace, pms, replace(cfg, heuristic=h)))
                for h in HEURISTICS}
        ma = [scenario_average(run_simulation(trace, pms, replace(cfg, rng_seed=s), algorithm="ma",
                                              ma_params=params))
              for s in range(10)]
        ma_mean = float(np.mean(ma))
        best_h = min(heur, key=heur.get)
        ok &= all(ma_mean <= v for v in heur.values())
        rows.append(f"{name}: MA {ma_mean:.4f} vs best heuristic {best_h} {heur[best_h]:.4f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 600
    report(2, ok, "; ".join(rows) + f"; {elapsed:.1f}s")
    assert ok


# -- 3 ------------------------------------------------------------------------------

def test_criterion_3_normalized_range():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    count, ok = 0, True
    methods = ("ws", "ed", "cd")
    for inst in range(100):
        part2 = inst % 2 == 1
        n, m = int(rng.integers(1, 8)), int(rng.integers(1, 25))
        pms, vms = random_instance(rng, n, m, part2=part2, sla_max=5)
        cfg = ProblemConfig(objective_set="part2" if part2 else "part1", s=5,
                            weights=(0.25,) * 4 if part2 else None)
        state = make_state(pms, vms, protection=(0.75,) * 3 if part2 else (1,) * 3)
        incumbent = {j: int(rng.integers(0, n + 1)) for j in state.vms} if part2 else None
        problems = {meth: Problem(state, replace(cfg, scalarizer=meth), incumbent) for meth in methods}
        genes = rng.integers(0, n + 1, size=(1000, m))
        norm = problems["ws"].evaluate(genes)[1]
        count += len(norm)
        ok &= bool(np.all((norm >= 0) & (norm <= 1)))
        cd, ed, l1 = norm.max(axis=1), np.sqrt((norm ** 2).sum(axis=1)), norm.sum(axis=1)
        ok &= bool(np.all(cd <= ed + 1e-12) and np.all(ed <= l1 + 1e-12))
        # raising any one component never lowers any scalarization
        rows = np.arange(len(norm))
        col = rng.integers(0, 4, size=len(norm))
        bump = norm.copy()
        bump[rows, col] = np.minimum(1.0, bump[rows, col] + rng.uniform(0, 0.5, size=len(norm)))
        for prob in problems.values():
            ok &= bool(np.all(prob._scalarize(norm) <= prob._scalarize(bump) + 1e-12))
    elapsed = time.perf_counter() - start
    ok &= count >= 100_000 and elapsed < 60
    report(3, ok, f"{count} fuzzed states in [0,1], monotone, CD<=ED<=L1; {elapsed:.1f}s")
    assert ok


# -- 4 ------------------------------------------------------------------------------

def test_criterion_4_constraints_every_step(monkeypatch):
    start = time.perf_counter()
    steps = 0
    cfg1 = ProblemConfig(s=5)
    for idx, kind in enumerate(("Poisson(10)", "Uniform(0,100)")):
        trace = legacy_workload(kind, LegacyParams(), np.random.default_rng(idx))
        for h in HEURISTICS:
            steps += len(run_simulation(trace, homogeneous_pms(10), replace(cfg1, heuristic=h),
                                        check=True).records)
        steps += len(run_simulation(trace, homogeneous_pms(10), cfg1, algorithm="ma",
                                    ma_params=MaParams(population_size=10, generations=5),
                                    check=True).records)
    name, trace, pms = _scenario(1, 5, duration=60)
    steps += len(run_simulation(trace, pms, replace(P2_BASE, vmpr_period=10),
                                ma_params=MaParams(population_size=10, generations=10),
                                check=True).records)
    # an oversubscribed PM must be caught
    state = make_state([(8, 10, 780, 960)], [dict(demand=(6, 1, 1)), dict(demand=(6, 1, 1))])
    state.place(1, 1)
    state.place(2, 1)
    injected = [v.kind for v in validate_placement(state, cfg1)] == ["capacity"]

    def crowd(name, batch, st, config):
        for vm in batch:
            st.place(vm.vm_id, 1)   # skips the capacity check
    monkeypatch.setattr(twophase, "place_batch", crowd)
    caught = False
    try:
        run_simulation(legacy_workload("Poisson(10)", LegacyParams(num_vms=30),
                                       np.random.default_rng(0)),
                       homogeneous_pms(2), cfg1, check=True)
    except ModelError:
        caught = True
    elapsed = time.perf_counter() - start
    ok = injected and caught
    report(4, ok, f"{steps} validated steps; injected oversubscription detected={injected and caught}; "
                  f"{elapsed:.1f}s")
    assert ok


# -- 5 ------------------------------------------------------------------------------

def test_criterion_5_trace_generator():
    start = time.perf_counter()
    events = generate(static_params(duration=50, rng_seed=11))
    counts = {}
    for e in events:
        counts.setdefault(e.b, {}).setdefault(e.t, 0)
        counts[e.b][e.t] += 1
    constant = all(len(set(per_t.values())) == 1 for per_t in counts.values())
    full = all(e.u_cpu == e.u_ram == e.u_net == 100.0 for e in events)
    files = [events] + [generate(elastic_params(variant=v, duration=30, num_services=20, rng_seed=v))
                        for v in range(16)]
    files.append(legacy_workload("Poisson(50)", rng=np.random.default_rng(5)))
    round_trip = all(parse_csv(write_csv(f)) == f for f in files)
    (row,) = parse_csv("0,0,0,0,6,8,450,100,100,100,0.065,0.016,0.179,0,1")
    fields = (row.t, row.b, row.c, row.v, row.cpu, row.ram, row.net, row.u_cpu, row.u_ram,
              row.u_net, row.r_cpu, row.r_ram, row.r_net, row.t_init, row.t_end)
    table_row = fields == (0, 0, 0, 0, 6, 8, 450, 100, 100, 100, 0.065, 0.016, 0.179, 0, 1)
    rng = np.random.default_rng(10)
    mean = float(np.mean([sample(Poisson(10), rng) for _ in range(100_000)]))
    elapsed = time.perf_counter() - start
    ok = constant and full and round_trip and table_row and abs(mean - 10) <= 0.1 and elapsed < 30
    report(5, ok, f"constant count={constant}, u=100 {full}, round-trip {round_trip}, "
                  f"sample row {table_row}, Poisson(10) mean {mean:.4f}; {elapsed:.1f}s")
    assert ok


# -- 6 ------------------------------------------------------------------------------

def test_criterion_6_two_phase_no_regression():
    start = time.perf_counter()
    two_phase, online, identical = [], [], True
    details = []
    for k, v in enumerate(SCENARIO_VARIANTS):
        name, trace, pms = _scenario(k, v)
        base = run_simulation(trace, pms, P2_BASE)
        tp = run_simulation(trace, pms, replace(P2_BASE, vmpr_period=10, vmpr_duration=4),
                            ma_params=TWO_PHASE_MA)
        never = run_simulation(trace, pms, replace(P2_BASE, vmpr_period=None),
                               ma_params=TWO_PHASE_MA)
        identical &= never.records == base.records and never.final_placement == base.final_placement
        online.append(scenario_average(base))
        two_phase.append(scenario_average(tp))
        details.append(f"{name} {two_phase[-1] - online[-1]:+.5f}")
    f_tp, f_on = cross_scenario_average(two_phase), cross_scenario_average(online)
    elapsed = time.perf_counter() - start
    ok = f_tp <= f_on and identical and elapsed < 900
    report(6, ok, f"two-phase {f_tp:.6f} vs BFD {f_on:.6f} ({f_tp - f_on:+.6f}); "
                  f"period=inf identical={identical}; per scenario [{', '.join(details)}]; "
                  f"{elapsed:.1f}s")
    assert ok


# -- 7 ------------------------------------------------------------------------------

def test_criterion_7_scalarization_harness(tmp_path):
    start = time.perf_counter()
    results = {m: MethodResult(m.upper()) for m in ("ws", "ed", "cd")}
    for k, v in enumerate((0, 5, 10, 15)):
        name, trace, pms = _scenario(k, v, duration=100)
        for method, res in results.items():
            cfg = replace(P2_BASE, scalarizer=method, vmpr_period=10)
            run = run_simulation(trace, pms, cfg, ma_params=TWO_PHASE_MA)
            res.scenario_costs[name] = scenario_average(run)
            res.scenario_objectives[name] = run.mean_normalized()
    tables = build_report(list(results.values()), ("power", "economic", "wasted", "reconfiguration"))
    for tname, table in tables.items():
        (tmp_path / f"{tname}.txt").write_text(table.to_text())
    print("\n" + tables["scalarization"].to_text())

    finals = {r.label: r.objective_means() for r in results.values()}
    pairs = {(a, b): pareto_dominates(finals[a], finals[b]) for a in finals for b in finals if a != b}
    consistent = not any(pairs[(a, b)] and pairs[(b, a)] for a, b in pairs)
    front = non_dominated(finals)

    rng = np.random.default_rng(77)
    vecs = rng.integers(0, 4, size=(10_000, 4)) / 3.0    # coarse grid so dominance is common
    irreflexive = not any(pareto_dominates(v, v) for v in vecs[:2000])
    asym = trans = pref = True
    for i in range(0, 10_000, 3):
        a, b, c = vecs[i], vecs[(i + 1) % 10_000], vecs[(i + 2) % 10_000]
        ab, bc = pareto_dominates(a, b), pareto_dominates(b, c)
        asym &= not (ab and pareto_dominates(b, a))
        trans &= not (ab and bc) or pareto_dominates(a, c)
        pref &= not ab or preferred(a, b) == -1
    # lower tier of a chain so transitivity is exercised, not just vacuous
    chain = [pareto_dominates(vecs[i] * 0.5, vecs[i] * 0.5 + 0.1) for i in range(100)]
    order_ok = irreflexive and asym and trans and pref and all(chain)
    # each F lives on its own scale, so the winner is judged on the objective means
    wins = {a: sum(preferred(finals[a], finals[b]) == -1 for b in finals if b != a) for a in finals}
    top = sorted(k for k, v in wins.items() if v == max(wins.values()))
    verdict = "ED wins" if top == ["ED"] else "ED ties" if "ED" in top else "ED does not win"
    elapsed = time.perf_counter() - start
    ok = consistent and order_ok and len(tables["scalarization"].rows) > 0
    report(7, ok, "own-scale F " + ", ".join(f"{r.label} {r.overall:.5f}" for r in results.values())
           + f"; preference wins {wins}, most preferred {top} ({verdict}); "
             f"non-dominated {front}; partial order holds={order_ok}; {elapsed:.1f}s")
    assert ok


# -- 8 ------------------------------------------------------------------------------

def test_criterion_8_weight_derivation():
    trace = legacy_workload("Poisson(10)", LegacyParams(), np.random.default_rng(1))
    cfg = ProblemConfig(s=5)
    # every VM alive at the busiest step, not yet placed
    busiest = max(set(e.t for e in trace), key=lambda t: sum(e.t == t for e in trace))
    snapshot = DatacenterState(homogeneous_pms(10))
    for ev in _Replay(trace).events(busiest, snapshot)[4]:
        apply_event(snapshot, ev)
    p = Problem(snapshot, cfg)
    rng = np.random.default_rng(3)
    samples = []
    while len(samples) < 1000:
        genes = repair(rng.integers(0, p.n + 1, size=p.m), p)
        _, norm, _, feasible = p.evaluate(genes[None])
        if feasible[0]:
            samples.append(tuple(norm[0]))
    weights = derive_ws_weights(samples)
    positive = all(np.isfinite(w) and w > 0 for w in weights)
    synth = rng.uniform(0.05, 1.0, size=(250, 4))
    w = derive_ws_weights(synth)
    identity = np.allclose(np.array(w) * synth.sum(axis=0), 250, rtol=1e-12)
    defaults = ProblemConfig().ws_weights == PART1_WEIGHTS
    ok = positive and identity and defaults
    report(8, ok, f"weights from 1000 samples {tuple(round(x, 4) for x in weights)}; "
                  f"identity {identity}; shipped defaults {defaults}")
    assert ok


# -- 9 ------------------------------------------------------------------------------

def _digest(root):
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def test_criterion_9_cli_determinism(tmp_path):
    (tmp_path / "legacy.json").write_text(json.dumps({"workload": "Poisson(10)", "duration": 30,
                                                      "num_vms": 25}))
    (tmp_path / "elastic.json").write_text(json.dumps(
        elastic_params(variant=6, duration=30, num_services=15).to_dict()))
    (tmp_path / "p1.json").write_text(json.dumps({"s": 5, "ma": {"population_size": 10,
                                                                 "generations": 5}}))
    (tmp_path / "p2.json").write_text(json.dumps({"objective_set": "part2", "weights": [0.25] * 4,
                                                  "protection": [0.75] * 3, "vmpr_period": 5,
                                                  "ma": {"population_size": 10, "generations": 5}}))
    digests = []
    for attempt in ("a", "b"):
        d = tmp_path / attempt
        codes = [
            main(["gen-trace", "--config", str(tmp_path / "legacy.json"), "--seed", "3",
                  "--out", str(d / "w1.csv")]),
            main(["gen-trace", "--config", str(tmp_path / "elastic.json"), "--seed", "4",
                  "--out", str(d / "e1.csv")]),
        ]
        for algo in ("ff", "bfd", "ma"):
            codes.append(main(["run", "--trace", str(d / "w1.csv"), "--config", str(tmp_path / "p1.json"),
                               "--algo", algo, "--seed", "1", "--seeds", "2", "--out", str(d / algo)]))
        for scal in ("ws", "ed", "cd"):
            codes.append(main(["run", "--trace", str(d / "e1.csv"), "--config", str(tmp_path / "p2.json"),
                               "--algo", "two-phase", "--scalarizer", scal, "--load-profile", "high",
                               "--out", str(d / f"tp-{scal}")]))
        codes.append(main(["compare", "--runs", *(str(d / a) for a in ("ff", "bfd", "ma")),
                           "--out", str(d / "report1")]))
        codes.append(main(["compare", "--runs", *(str(d / f"tp-{s}") for s in ("ws", "ed", "cd")),
                           "--out", str(d / "report2")]))
        assert codes == [0] * len(codes)
        digests.append(_digest(d))
    files = sum(1 for q in (tmp_path / "a").rglob("*") if q.is_file())
    ok = digests[0] == digests[1]
    report(9, ok, f"{files} output files from gen-trace/run/compare, sha256 equal={ok}")
    assert ok
