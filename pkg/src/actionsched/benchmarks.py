"""Bundled benchmark presets: clusters plus trace-generator parameters.

These presets back the comparison CLI and the acceptance suite.  Load
levels are derived analytically from the generator's lognormal means so
the presets stay self-consistent when tweaked.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .model import ClusterSpec, CpuNodeSpec, ResourceSpec, ServiceSpec
from .trace import GenParams


@dataclass(frozen=True)
class Benchmark:
    name: str
    cluster: ClusterSpec
    gen: GenParams
    seed: int = 7
    timeout: float = 600.0


def _lognormal_mean(mu: float, sigma: float) -> float:
    return math.exp(mu + sigma * sigma / 2.0)


def mean_act_work(gen: GenParams) -> float:
    """Expected one-unit act work per trajectory, in unit-seconds."""
    mean_turns = (gen.turns[0] + gen.turns[1]) / 2.0
    tools = (mean_turns - 1) * _lognormal_mean(*gen.tool_dur)
    reward = _lognormal_mean(*gen.reward_dur)
    return tools + reward


def offered_work_rate(gen: GenParams) -> float:
    """Offered act work per second over the arrival window."""
    if gen.arrival_spread <= 0:
        return float("inf")
    return gen.n_trajectories * mean_act_work(gen) / gen.arrival_spread


def static_sustainable_rate(total_cores: int, active_ratio: float) -> float:
    """Act-work throughput cap of the half-core pod-per-trajectory baseline.

    A pod executes acts at half speed and idles through think time, so one
    trajectory of work W occupies a pod for W*((1-r)/r + 2) wall seconds.
    """
    pods = total_cores * 2
    wall_per_work = (1.0 - active_ratio) / active_ratio + 2.0
    return pods / wall_per_work


# -- CPU coding-like benchmarks (tool sandboxes + scalable reward runs) ----


def coding_cluster() -> ClusterSpec:
    return ClusterSpec((
        ResourceSpec(
            type_id=0, name="cpu", kind="cpu",
            cpu_nodes=(
                CpuNodeSpec(cores=32, numa_domains=2, memory=10_000.0),
                CpuNodeSpec(cores=32, numa_domains=2, memory=10_000.0),
            ),
            exec_overhead=0.024,
        ),
    ))


def _coding_gen(n: int, spread: float) -> GenParams:
    return GenParams(
        n_trajectories=n, kind="cpu", resource="cpu",
        turns=(2, 4), tool_dur=(0.0, 0.6), reward_dur=(2.3, 0.8),
        active_ratio=0.47, scalable_fraction=0.9, max_dop=32,
        gamma_range=(0.0, 0.25), arrival_spread=spread,
    )


def coding_low() -> Benchmark:
    return Benchmark("coding-low", coding_cluster(), _coding_gen(64, 40.0))


def coding_high() -> Benchmark:
    return Benchmark("coding-high", coding_cluster(), _coding_gen(320, 40.0))


def saturation() -> Benchmark:
    """Offered load calibrated to ~1.25x the static baseline's capacity."""
    cluster = coding_cluster()
    gen = _coding_gen(400, 1.0)
    target = 1.25 * static_sustainable_rate(64, gen.active_ratio)
    spread = gen.n_trajectories * mean_act_work(gen) / target
    gen = GenParams(**{**gen.__dict__, "arrival_spread": spread})
    return Benchmark("saturation", cluster, gen)


def saturation_load_factor(bench: Benchmark) -> float:
    total_cores = sum(n.cores for n in bench.cluster.resources[0].cpu_nodes)
    return offered_work_rate(bench.gen) / static_sustainable_rate(
        total_cores, bench.gen.active_ratio)


# -- GPU model-serving benchmark (reward/teacher model calls) --------------

N_SERVICES = 10
DEDICATED_GPUS_PER_SERVICE = 4
DEFAULT_RESTORE = 0.6  # seconds; calibrated for a 15-35% overhead share


def _gpu_services() -> tuple[ServiceSpec, ...]:
    return tuple(
        ServiceSpec(service_id=f"svc{i}", dops=(1, 2, 4, 8))
        for i in range(N_SERVICES)
    )


def serving_cluster_elastic() -> ClusterSpec:
    """40% of the dedicated GPU count, shared via caching and eviction."""
    dedicated = N_SERVICES * DEDICATED_GPUS_PER_SERVICE
    nodes = int(dedicated * 0.4) // 8
    return ClusterSpec((
        ResourceSpec(
            type_id=0, name="gpu", kind="gpu", gpu_nodes=nodes,
            services=_gpu_services(), default_restore=DEFAULT_RESTORE,
        ),
    ))


def serving_cluster_dedicated() -> ClusterSpec:
    nodes = N_SERVICES * DEDICATED_GPUS_PER_SERVICE // 8
    return ClusterSpec((
        ResourceSpec(
            type_id=0, name="gpu", kind="gpu", gpu_nodes=nodes,
            services=_gpu_services(), default_restore=DEFAULT_RESTORE,
        ),
    ))


def serving_gen() -> GenParams:
    return GenParams(
        n_trajectories=120, kind="gpu", resource="gpu",
        turns=(2, 4), tool_dur=(0.3, 0.5), reward_dur=(1.6, 0.6),
        active_ratio=0.47, scalable_fraction=0.9,
        n_services=N_SERVICES, service_skew=0.5,
        gpu_units=(1, 2, 4, 8), arrival_spread=180.0,
    )


def serving_elastic() -> Benchmark:
    return Benchmark("serving-elastic", serving_cluster_elastic(), serving_gen())


def serving_dedicated() -> Benchmark:
    return Benchmark("serving-dedicated", serving_cluster_dedicated(), serving_gen())


# -- API quota benchmark ---------------------------------------------------


def api_quota_cluster() -> ClusterSpec:
    return ClusterSpec((
        ResourceSpec(type_id=0, name="api", kind="quota",
                     capacity=60, window=5.0),
    ))


def api_concurrency_cluster() -> ClusterSpec:
    return ClusterSpec((
        ResourceSpec(type_id=0, name="api", kind="concurrency", capacity=32),
    ))


def api_gen() -> GenParams:
    # ~10,000 actions at just under the quota's sustainable rate
    return GenParams(
        n_trajectories=2250, kind="api", resource="api",
        turns=(3, 6), tool_dur=(-0.7, 0.5), reward_dur=(-0.3, 0.5),
        active_ratio=0.47, scalable_fraction=0.0,
        arrival_spread=1000.0,
    )


def api_quota() -> Benchmark:
    return Benchmark("api-quota", api_quota_cluster(), api_gen())


def api_concurrency() -> Benchmark:
    return Benchmark("api-concurrency", api_concurrency_cluster(), api_gen())


BENCHMARKS = {
    "coding-low": coding_low,
    "coding-high": coding_high,
    "saturation": saturation,
    "serving-elastic": serving_elastic,
    "serving-dedicated": serving_dedicated,
    "api-quota": api_quota,
    "api-concurrency": api_concurrency,
}


def get(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]()
    except KeyError:
        raise KeyError(
            f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}"
        ) from None
