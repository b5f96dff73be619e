"""Acceptance suite: one test per criterion, printing a PASS/FAIL line each.

Run with ``pytest -v -s tests/test_acceptance.py`` to see the lines; each
test also asserts its stated tolerance and runtime budget.
"""
import random
import statistics
import time

import pytest

from actionsched import benchmarks
from actionsched.cli import dp_oracle, gpu_oracle
from actionsched.gputopo import decode_state, encode_state
from actionsched.model import (
    Action,
    CostVector,
    ElasticityProfile,
    ResourceSpec,
    UnitSpec,
)
from actionsched.managers import build_manager
from actionsched.scheduler import schedule
from actionsched.sim import (
    DedicatedServices,
    ElasticActionLevel,
    FixedDoP,
    TrajectoryStatic,
    run,
    summarize,
)
from actionsched.trace import gen_trace


def report(criterion: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"\n[{status}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


def bench_summary(name: str, policy) -> dict:
    bench = benchmarks.get(name)
    trace = gen_trace(bench.gen, bench.seed)
    records, _ = run(trace, bench.cluster, policy, timeout=bench.timeout)
    return summarize(records)


def test_1_dp_optimality_oracle():
    t0 = time.perf_counter()
    matches = dp_oracle(instances=500, max_tasks=4, max_units=16, seed=7)
    elapsed = time.perf_counter() - t0
    ok = matches == 500 and elapsed < 10.0
    report("criterion 1 (DP optimality oracle)", ok,
           f"{matches}/500 exact matches in {elapsed:.2f}s (budget 10s)")


def test_2_gpu_state_algebra():
    t0 = time.perf_counter()
    maxima = (8, 4, 2, 2)
    total = 1
    for m in maxima:
        total *= m + 1
    bijective = all(
        encode_state(decode_state(j, maxima)) == j for j in range(total)
    )
    conserved = gpu_oracle(transitions=10_000, seed=7)
    # chunk legality (start mod 2^level == 0) is enforced by the Chunk
    # constructor; exercise it over every legal (start, level) pair
    from actionsched.gputopo import Chunk
    from actionsched.model import ConsistencyError
    legality = True
    for level in range(4):
        size = 1 << level
        for start in range(8):
            try:
                Chunk(node=0, start=start, level=level)
                legal = start % size == 0 and start + size <= 8
            except ConsistencyError:
                legal = False
            if legal != (start % size == 0 and start + size <= 8):
                legality = False
    elapsed = time.perf_counter() - t0
    ok = bijective and conserved == 10_000 and legality and elapsed < 5.0
    report("criterion 2 (GPU state algebra)", ok,
           f"bijection over {total} states, {conserved}/10000 transitions "
           f"conserve devices, alignment enforced, {elapsed:.2f}s (budget 5s)")


def _random_queue(rng, n):
    queue = []
    for i in range(n):
        if rng.random() < 0.3:
            units = (rng.choice([1, 2]),)
            queue.append(Action(
                id=i, trajectory_id=i, submit_time=rng.random(),
                cost=CostVector.of({0: UnitSpec(units)}),
                elasticity=ElasticityProfile.unknown(0)))
        else:
            units = tuple(sorted(set([1] + rng.sample([2, 4, 8], rng.randint(1, 3)))))
            gamma = rng.uniform(0.0, 0.6)
            table = {m: (m ** -gamma if m > 1 else 1.0) for m in units}
            queue.append(Action(
                id=i, trajectory_id=i, submit_time=rng.random(),
                cost=CostVector.of({0: UnitSpec(units)}),
                elasticity=ElasticityProfile.of(0, table),
                base_duration=rng.uniform(0.5, 20.0)))
    return queue


def test_3_scheduler_properties():
    t0 = time.perf_counter()
    rng = random.Random(17)
    violations = []
    for trial in range(200):
        cap = rng.randint(2, 32)
        queue = _random_queue(rng, rng.randint(1, 12))
        spec = ResourceSpec(type_id=0, name="u", kind="flat", capacity=cap)
        depth = rng.choice([1, 2, 3])
        d = schedule(queue, {0: build_manager(spec)}, depth=depth)
        d2 = schedule(list(reversed(queue)), {0: build_manager(spec)},
                      depth=depth)
        if [(p.action.id, p.units) for p in d.selected] != \
                [(p.action.id, p.units) for p in d2.selected]:
            violations.append(f"trial {trial}: nondeterministic")
        if sum(p.units.get(0, 0) for p in d.selected) > cap:
            violations.append(f"trial {trial}: capacity exceeded")
        for g in d.log["groups"]:
            objs = g.get("objectives", [])
            if not all(a > b for a, b in zip(objs, objs[1:])):
                violations.append(f"trial {trial}: objectives not decreasing")
        order = sorted(queue, key=Action.fcfs_key)
        sel = {p.action.id for p in d.selected}
        seen_gap = False
        for a in order:
            if a.id in sel and seen_gap:
                violations.append(f"trial {trial}: selection not FCFS prefix")
                break
            if a.id not in sel:
                seen_gap = True
    elapsed = time.perf_counter() - t0
    ok = not violations and elapsed < 10.0
    report("criterion 3 (scheduler properties)", ok,
           f"200 invocations, {len(violations)} violations "
           f"{violations[:3]}, {elapsed:.2f}s (budget 10s)")


def test_4_elastic_vs_fixed_dop():
    t0 = time.perf_counter()
    low_e = bench_summary("coding-low", ElasticActionLevel())["mean_act"]
    low_f = bench_summary("coding-low", FixedDoP(4))["mean_act"]
    high_e = bench_summary("coding-high", ElasticActionLevel())["mean_act"]
    high_f = bench_summary("coding-high", FixedDoP(16))["mean_act"]
    elapsed = time.perf_counter() - t0
    low_ratio = low_f / low_e
    high_ratio = high_f / high_e
    ok = low_ratio >= 1.3 and high_ratio >= 1.3 and elapsed < 120.0
    report("criterion 4 (elastic vs fixed DoP)", ok,
           f"low load {low_e:.3f}s vs fixed-dop-4 {low_f:.3f}s "
           f"({low_ratio:.2f}x, need >=1.3); high load {high_e:.3f}s vs "
           f"fixed-dop-16 {high_f:.3f}s ({high_ratio:.2f}x, need >=1.3); "
           f"{elapsed:.1f}s (budget 120s)")


def test_5_elastic_vs_trajectory_static():
    t0 = time.perf_counter()
    bench = benchmarks.get("saturation")
    load = benchmarks.saturation_load_factor(bench)
    elastic = bench_summary("saturation", ElasticActionLevel())["mean_act"]
    static = bench_summary("saturation", TrajectoryStatic())["mean_act"]
    elapsed = time.perf_counter() - t0
    ratio = elastic / static
    ok = load >= 1.2 and ratio <= 0.5 and elapsed < 120.0
    report("criterion 5 (elastic vs trajectory-static at saturation)", ok,
           f"offered load {load:.2f}x static capacity (need >=1.2); "
           f"elastic {elastic:.3f}s vs static {static:.3f}s "
           f"(ratio {ratio:.2f}, need <=0.5); {elapsed:.1f}s (budget 120s)")


def test_6_gpu_consolidation():
    t0 = time.perf_counter()
    elastic_bench = benchmarks.get("serving-elastic")
    dedicated_bench = benchmarks.get("serving-dedicated")
    shared = elastic_bench.cluster.resources[0].total_units()
    dedicated_gpus = dedicated_bench.cluster.resources[0].total_units()
    elastic = bench_summary("serving-elastic", ElasticActionLevel())["mean_act"]
    dedicated = bench_summary(
        "serving-dedicated",
        DedicatedServices(benchmarks.DEDICATED_GPUS_PER_SERVICE))["mean_act"]
    elapsed = time.perf_counter() - t0
    ratio = elastic / dedicated
    ok = shared == int(0.4 * dedicated_gpus) // 8 * 8 and ratio <= 1.5 \
        and elapsed < 120.0
    report("criterion 6 (GPU consolidation)", ok,
           f"{shared} shared GPUs vs {dedicated_gpus} dedicated (40%); "
           f"elastic {elastic:.3f}s vs dedicated {dedicated:.3f}s "
           f"(ratio {ratio:.2f}, need <=1.5); {elapsed:.1f}s (budget 120s)")


def test_7_act_accounting_and_overhead_share():
    bench = benchmarks.get("serving-elastic")
    trace = gen_trace(bench.gen, bench.seed)
    records, _ = run(trace, bench.cluster, ElasticActionLevel(),
                     timeout=bench.timeout)
    identity = all(
        r.act_us == r.queue_us + r.exec_us + r.overhead_us and
        r.act_us == r.end_us - r.submit_us
        for r in records
    )
    total_overhead = sum(r.overhead_us for r in records)
    total_exec = sum(r.exec_us for r in records)
    share = total_overhead / total_exec
    ok = identity and 0.15 <= share <= 0.35
    report("criterion 7 (ACT accounting + overhead share)", ok,
           f"identity exact over {len(records)} actions; overhead/exec "
           f"share {share:.3f} (need within [0.15, 0.35])")


def test_8_scheduling_latency():
    rng = random.Random(23)
    queue = _random_queue(rng, 64)
    spec = ResourceSpec(type_id=0, name="u", kind="flat", capacity=256)
    times = []
    for _ in range(100):
        mgr = build_manager(spec)
        t0 = time.perf_counter()
        schedule(queue, {0: mgr}, depth=2)
        times.append(time.perf_counter() - t0)
    median_ms = statistics.median(times) * 1000.0
    ok = median_ms < 10.0
    report("criterion 8 (scheduling latency)", ok,
           f"64 candidates, 256 units, depth 2: median {median_ms:.2f}ms "
           f"over 100 calls (need <10ms), max {max(times) * 1000:.2f}ms")


def _window_violations(events, limit, window):
    """Max per-window grant count from the event log of a quota run."""
    win_us = int(window * 1e6)
    grants = {}
    for e in events:
        if e["ev"] == "acquire":
            grants[e["t"] // win_us] = grants.get(e["t"] // win_us, 0) \
                + e["units"]
    worst = max(grants.values(), default=0)
    return worst, sum(1 for v in grants.values() if v > limit)


def test_9_quota_safety():
    quota_bench = benchmarks.get("api-quota")
    trace = gen_trace(quota_bench.gen, quota_bench.seed)
    n_actions = sum(len(t.acts()) for t in trace)
    records, events = run(trace, quota_bench.cluster, ElasticActionLevel(),
                          timeout=quota_bench.timeout)
    limit = quota_bench.cluster.resources[0].capacity
    window = quota_bench.cluster.resources[0].window
    worst, violations = _window_violations(events, limit, window)

    conc_bench = benchmarks.get("api-concurrency")
    conc_trace = gen_trace(conc_bench.gen, conc_bench.seed)
    conc_records, conc_events = run(conc_trace, conc_bench.cluster,
                                    ElasticActionLevel(),
                                    timeout=conc_bench.timeout)
    cap = conc_bench.cluster.resources[0].capacity
    live = 0
    conc_worst = 0
    conc_violations = 0
    for e in conc_events:
        if e["ev"] == "acquire":
            live += e["units"]
            conc_worst = max(conc_worst, live)
            if live > cap:
                conc_violations += 1
        elif e["ev"] == "release":
            live -= e["units"]

    ok = n_actions >= 10_000 and violations == 0 and conc_violations == 0
    report("criterion 9 (quota safety)", ok,
           f"{n_actions} actions; quota worst window {worst}/{limit} "
           f"({violations} violations); concurrency peak {conc_worst}/{cap} "
           f"({conc_violations} violations)")
