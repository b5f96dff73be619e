"""Command-line entry point: trace generation, simulation, comparison, oracles.

All outputs are written atomically (temp file + rename) and are pure
functions of (config, seed): identical invocations reproduce identical
files byte for byte.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import random
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from . import benchmarks
from .dp import DpTask, brute_force_arrange, dp_arrange, basic_operator
from .gputopo import ChunkCounts, decode_state, encode_state, gpu_prev
from .model import (
    ClusterSpec,
    CpuNodeSpec,
    ResourceSpec,
    SchedulingError,
    ServiceSpec,
)
from .sim import make_policy, run, summarize
from .trace import GenParams, TraceError, gen_trace, read_trace, write_trace

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


# -- cluster config file ---------------------------------------------------


def cluster_to_dict(cluster: ClusterSpec) -> dict:
    out = []
    for r in cluster.resources:
        d: dict = {"name": r.name, "kind": r.kind}
        if r.kind == "cpu":
            d["nodes"] = [
                {"cores": n.cores, "numa_domains": n.numa_domains, "memory": n.memory}
                for n in r.cpu_nodes
            ]
            d["exec_overhead"] = r.exec_overhead
        elif r.kind == "gpu":
            d["gpu_nodes"] = r.gpu_nodes
            d["default_restore"] = r.default_restore
            d["services"] = [
                {"id": s.service_id, "dops": list(s.dops),
                 "restore_cost": s.restore_cost}
                for s in r.services
            ]
        else:
            d["capacity"] = r.capacity
            if r.kind == "quota":
                d["window"] = r.window
        out.append(d)
    return {"resources": out}


def cluster_from_dict(data: dict) -> ClusterSpec:
    resources = []
    for i, d in enumerate(data["resources"]):
        kind = d["kind"]
        if kind == "cpu":
            resources.append(ResourceSpec(
                type_id=i, name=d["name"], kind=kind,
                cpu_nodes=tuple(
                    CpuNodeSpec(cores=n["cores"],
                                numa_domains=n.get("numa_domains", 1),
                                memory=n.get("memory", 0.0))
                    for n in d["nodes"]
                ),
                exec_overhead=d.get("exec_overhead", 0.0),
            ))
        elif kind == "gpu":
            resources.append(ResourceSpec(
                type_id=i, name=d["name"], kind=kind,
                gpu_nodes=d["gpu_nodes"],
                default_restore=d.get("default_restore", 0.0),
                services=tuple(
                    ServiceSpec(service_id=s["id"], dops=tuple(s["dops"]),
                                restore_cost=s.get("restore_cost"))
                    for s in d.get("services", [])
                ),
            ))
        else:
            resources.append(ResourceSpec(
                type_id=i, name=d["name"], kind=kind,
                capacity=d["capacity"], window=d.get("window", 0.0),
            ))
    return ClusterSpec(tuple(resources))


def load_cluster(path: str) -> ClusterSpec:
    with open(path) as f:
        return cluster_from_dict(json.load(f))


def load_gen_params(path: str) -> GenParams:
    with open(path) as f:
        data = json.load(f)
    for key in ("turns", "tool_dur", "reward_dur", "gamma_range",
                "gpu_units", "memory_range"):
        if key in data:
            data[key] = tuple(data[key])
    return GenParams(**data)


# -- atomic output helpers -------------------------------------------------


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _records_csv(records) -> str:
    lines = ["action_id,trajectory_id,policy,submit,start,end,"
             "queue,exec,overhead,ACT,units,status"]
    for r in sorted(records, key=lambda x: x.action_id):
        lines.append(
            f"{r.action_id},{r.trajectory_id},{r.policy},"
            f"{r.submit_us / 1e6!r},{r.start_us / 1e6!r},{r.end_us / 1e6!r},"
            f"{r.queue!r},{r.exec!r},{r.overhead!r},{r.act!r},"
            f"{r.units},{r.status}"
        )
    return "\n".join(lines) + "\n"


def _trace_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- oracles ---------------------------------------------------------------


def dp_oracle(instances: int, max_tasks: int, max_units: int, seed: int) -> int:
    """Cross-check dp_arrange against exhaustive enumeration.

    Returns the number of matching instances (mismatch => early counts).
    """
    rng = random.Random(seed)
    allowed_pool = [1, 2, 4, 8, 16]
    matches = 0
    for _ in range(instances):
        n_tasks = rng.randint(1, max_tasks)
        capacity = rng.randint(1, max_units)
        tasks = []
        for _ in range(n_tasks):
            units = tuple(sorted(rng.sample(allowed_pool, rng.randint(1, 4))))
            base = rng.uniform(0.5, 20.0)
            gamma = rng.uniform(0.0, 0.9)
            durs = tuple(
                base if m == 1 else base / (m ** -gamma * m) for m in units
            )
            tasks.append(DpTask(units, durs))
        expect = brute_force_arrange(tasks, capacity)
        try:
            got = dp_arrange(tasks, basic_operator(capacity))
        except SchedulingError:
            got = None
        if expect is None and got is None:
            matches += 1
        elif expect is not None and got is not None \
                and got.total_duration == expect.total_duration:
            matches += 1
    return matches


def gpu_oracle(transitions: int, seed: int) -> int:
    """Random gpu_prev transitions; counts how many conserve device totals."""
    rng = random.Random(seed)
    ok = 0
    for _ in range(transitions):
        maxima = (8, 4, 2, 2)
        counts = tuple(rng.randint(0, m) for m in maxima)
        state = ChunkCounts(counts, maxima)
        k = rng.choice((1, 2, 4, 8))
        nxt = gpu_prev(state, k)
        if nxt is None:
            ok += 1  # rejection is always safe
            continue
        if state.devices() - nxt.devices() == k:
            ok += 1
    return ok


# -- subcommands -----------------------------------------------------------


def _resolve_inputs(args) -> tuple[ClusterSpec, list, dict]:
    """Build (cluster, trace, config snapshot) from flags; flags win over
    benchmark presets."""
    snapshot: dict = {"seed": args.seed, "depth": args.depth,
                      "timeout": args.timeout, "policy": getattr(args, "policy", None)}
    bench = benchmarks.get(args.bench) if args.bench else None
    if args.cluster:
        cluster = load_cluster(args.cluster)
        snapshot["cluster"] = cluster_to_dict(cluster)
    elif bench:
        cluster = bench.cluster
        snapshot["cluster"] = cluster_to_dict(cluster)
        snapshot["bench"] = bench.name
    else:
        raise SchedulingError("need --cluster or --bench")
    if args.trace:
        trace = read_trace(args.trace)
        snapshot["trace"] = {"path": args.trace,
                             "sha256": _trace_sha256(Path(args.trace))}
    elif args.gen:
        params = load_gen_params(args.gen)
        trace = gen_trace(params, args.seed)
        snapshot["gen"] = asdict(params)
    elif bench:
        trace = gen_trace(bench.gen, args.seed)
        snapshot["gen"] = asdict(bench.gen)
    else:
        raise SchedulingError("need --trace, --gen, or --bench")
    return cluster, trace, snapshot


def cmd_gen_trace(args) -> int:
    if args.gen:
        params = load_gen_params(args.gen)
    elif args.bench:
        params = benchmarks.get(args.bench).gen
    else:
        raise SchedulingError("need --gen or --bench")
    trace = gen_trace(params, args.seed)
    out = Path(args.out)
    write_trace(out, trace)
    print(f"wrote {len(trace)} trajectories to {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cluster, trace, snapshot = _resolve_inputs(args)
    policy = make_policy(args.policy, depth=args.depth, dop=args.dop,
                         gpus_per_service=args.gpus_per_service)
    records, events = run(trace, cluster, policy, timeout=args.timeout)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", snapshot)
    _atomic_write(out / "records.csv", _records_csv(records))
    _write_json(out / "summary.json", summarize(records, window=args.window))
    _atomic_write(out / "events.jsonl",
                  "".join(json.dumps(e, sort_keys=True) + "\n" for e in events))
    summary = summarize(records)
    print(f"{policy.name}: {summary['count']} actions, "
          f"mean ACT {summary['mean_act']:.3f}s, "
          f"{summary['timeouts']} timeouts")
    return EXIT_OK


def cmd_compare(args) -> int:
    cluster, trace, snapshot = _resolve_inputs(args)
    names = [p.strip() for p in args.policies.split(",") if p.strip()]
    if not names:
        raise SchedulingError("no policies given")
    summaries = {}
    for name in names:
        policy = make_policy(name, depth=args.depth, dop=args.dop,
                             gpus_per_service=args.gpus_per_service)
        records, _ = run(trace, cluster, policy, timeout=args.timeout)
        summaries[policy.name] = summarize(records)
    base = summaries[next(iter(summaries))]["mean_act"]
    table = {
        name: {"mean_act": s["mean_act"],
               "ratio_vs_first": s["mean_act"] / base if base else None,
               "timeouts": s["timeouts"]}
        for name, s in summaries.items()
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", snapshot)
        _write_json(out / "compare.json",
                    {"summaries": summaries, "ratios": table})
    width = max(len(n) for n in table)
    print(f"{'policy':<{width}}  mean_act  ratio  timeouts")
    for name, row in table.items():
        print(f"{name:<{width}}  {row['mean_act']:8.3f}  "
              f"{row['ratio_vs_first']:5.2f}  {row['timeouts']:8d}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    failed = False
    if args.dp or not (args.dp or args.gpu):
        matches = dp_oracle(args.instances, args.max_tasks, args.max_units,
                            args.seed)
        print(f"dp: {matches}/{args.instances} match")
        failed |= matches != args.instances
    if args.gpu:
        ok = gpu_oracle(args.instances, args.seed)
        print(f"gpu: {ok}/{args.instances} conserve devices")
        failed |= ok != args.instances
    return EXIT_ERROR if failed else EXIT_OK


# -- argument parsing ------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cluster", help="cluster spec JSON file (config key: cluster)")
    p.add_argument("--trace", help="trace file to replay (config key: trace)")
    p.add_argument("--gen", help="generator params JSON file (config key: gen)")
    p.add_argument("--bench", help="bundled benchmark preset name "
                   f"(one of {sorted(benchmarks.BENCHMARKS)})")
    p.add_argument("--depth", type=int, default=2,
                   help="estimate exploration depth (config key: depth, default 2)")
    p.add_argument("--timeout", type=float, default=600.0,
                   help="per-action queue timeout seconds (config key: timeout, "
                        "default 600)")
    p.add_argument("--seed", type=int, default=0,
                   help="deterministic seed (config key: seed)")
    p.add_argument("--dop", type=int, default=4,
                   help="units for the fixed-dop policy")
    p.add_argument("--gpus-per-service", type=int, default=4,
                   help="slice size for the dedicated policy")
    p.add_argument("--window", type=float, default=0.0,
                   help="tumbling window width for the summary series")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actionsched",
        description="Elastic action-level scheduling simulator. Run config "
                    "keys: cluster, trace, gen, policy, depth, timeout, "
                    "out, seed.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", help="generate a synthetic trace file")
    p.add_argument("--gen", help="generator params JSON file")
    p.add_argument("--bench", help="use a bundled benchmark's generator")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output trace path")
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("simulate", help="run one policy over a trace")
    _add_run_flags(p)
    p.add_argument("--policy", required=True,
                   help="elastic | trajectory-static | fixed-dop[-N] | "
                        "dedicated[-N] (config key: policy)")
    p.add_argument("--out", required=True,
                   help="output directory (config key: out)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run several policies on one trace")
    _add_run_flags(p)
    p.add_argument("--policies", required=True,
                   help="comma-separated policy names")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("oracle", help="run brute-force cross-checks")
    p.add_argument("--dp", action="store_true", help="check the allocation DP")
    p.add_argument("--gpu", action="store_true", help="check GPU transitions")
    p.add_argument("--instances", type=int, default=500)
    p.add_argument("--max-tasks", type=int, default=4)
    p.add_argument("--max-units", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (SchedulingError, TraceError, FileNotFoundError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
