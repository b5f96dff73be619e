"""Trajectory trace format, deterministic workload generator, and file I/O.

A trace is newline-delimited JSON: a self-describing header line followed by
one trajectory per line.  Trajectories alternate think segments (model
generation, no external resources) and act segments (external invocations).
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

from .model import SchedulingError

FORMAT_NAME = "action-trace"
FORMAT_VERSION = 1


class TraceError(SchedulingError):
    pass


@dataclass(frozen=True)
class ThinkSeg:
    dur: float


@dataclass(frozen=True)
class ActSeg:
    resource: str  # key elasticity resource name
    units: tuple[int, ...]  # allowed units on the key resource
    true_dur: float  # actual duration at one unit (ground truth)
    elasticity: tuple[tuple[int, float], ...] = ()  # profiled E(m) table
    profiled: bool = False  # scheduler may see base_dur/elasticity
    service: Optional[str] = None
    quota_units: int = 1  # consumption for quota/concurrency resources


Segment = Union[ThinkSeg, ActSeg]


@dataclass(frozen=True)
class TrajectoryRec:
    id: int
    segments: tuple[Segment, ...]
    memory: float = 0.0
    start: float = 0.0  # submit offset from simulation start, seconds

    def __post_init__(self) -> None:
        if not self.segments:
            raise TraceError(f"trajectory {self.id} has no segments")
        if self.start < 0:
            raise TraceError(f"trajectory {self.id} has negative start")
        for seg in self.segments:
            dur = seg.dur if isinstance(seg, ThinkSeg) else seg.true_dur
            if dur <= 0:
                raise TraceError(f"trajectory {self.id} has non-positive duration")

    def acts(self) -> list[ActSeg]:
        return [s for s in self.segments if isinstance(s, ActSeg)]

    def active_ratio(self) -> float:
        act = sum(s.true_dur for s in self.acts())
        think = sum(s.dur for s in self.segments if isinstance(s, ThinkSeg))
        return act / (act + think)


def measure_active_ratio(trajectories: Sequence[TrajectoryRec]) -> float:
    return sum(t.active_ratio() for t in trajectories) / len(trajectories)


# --- serialization -------------------------------------------------------


def _seg_to_dict(seg: Segment) -> dict:
    if isinstance(seg, ThinkSeg):
        return {"kind": "think", "dur": seg.dur}
    d = {
        "kind": "act",
        "resource": seg.resource,
        "units": list(seg.units),
        "true_dur": seg.true_dur,
        "profiled": seg.profiled,
        "quota_units": seg.quota_units,
    }
    if seg.elasticity:
        d["elasticity"] = {str(m): e for m, e in seg.elasticity}
    if seg.service is not None:
        d["service"] = seg.service
    return d


def _seg_from_dict(d: dict) -> Segment:
    if d["kind"] == "think":
        return ThinkSeg(dur=d["dur"])
    if d["kind"] != "act":
        raise TraceError(f"unknown segment kind {d['kind']!r}")
    elasticity = tuple(
        sorted((int(m), e) for m, e in d.get("elasticity", {}).items())
    )
    return ActSeg(
        resource=d["resource"],
        units=tuple(d["units"]),
        true_dur=d["true_dur"],
        elasticity=elasticity,
        profiled=d.get("profiled", False),
        service=d.get("service"),
        quota_units=d.get("quota_units", 1),
    )


def write_trace(path: Union[str, Path], trajectories: Sequence[TrajectoryRec]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w") as f:
        header = {"format": FORMAT_NAME, "version": FORMAT_VERSION,
                  "trajectories": len(trajectories)}
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for tr in trajectories:
            rec = {
                "id": tr.id,
                "memory": tr.memory,
                "start": tr.start,
                "segments": [_seg_to_dict(s) for s in tr.segments],
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    tmp.replace(path)


def read_trace(path: Union[str, Path]) -> list[TrajectoryRec]:
    path = Path(path)
    with path.open() as f:
        lines = [ln for ln in f if ln.strip()]
    if not lines:
        raise TraceError(f"{path}: empty trace file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceError(f"{path}: bad header: {exc}") from exc
    if header.get("format") != FORMAT_NAME:
        raise TraceError(f"{path}: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise TraceError(f"{path}: unsupported version {header.get('version')}")
    out = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            d = json.loads(line)
            out.append(TrajectoryRec(
                id=d["id"],
                memory=d.get("memory", 0.0),
                start=d.get("start", 0.0),
                segments=tuple(_seg_from_dict(s) for s in d["segments"]),
            ))
        except (KeyError, json.JSONDecodeError) as exc:
            raise TraceError(f"{path}:{i}: malformed trajectory: {exc}") from exc
    return out


# --- workload generation -------------------------------------------------


@dataclass(frozen=True)
class GenParams:
    """Knobs for the synthetic agentic-rollout workload generator."""

    n_trajectories: int
    kind: str = "cpu"  # cpu | gpu | api
    resource: str = "cpu"
    turns: tuple[int, int] = (2, 5)  # think+tool turns before the reward act
    tool_dur: tuple[float, float] = (0.0, 0.6)  # lognormal (mu, sigma) seconds
    reward_dur: tuple[float, float] = (2.3, 0.8)  # long-tailed reward actions
    active_ratio: float = 0.47
    scalable_fraction: float = 1.0  # rewards with profiled elasticity
    max_dop: int = 32
    gamma_range: tuple[float, float] = (0.0, 0.25)  # E(m) = m ** -gamma
    n_services: int = 1
    service_skew: float = 1.2  # zipf-ish popularity exponent
    gpu_units: tuple[int, ...] = (1, 2, 4, 8)
    arrival_spread: float = 0.0  # trajectory submit times uniform in [0, spread)
    memory_range: tuple[float, float] = (1.0, 4.0)

    def validate(self) -> None:
        if self.n_trajectories <= 0:
            raise TraceError("n_trajectories must be positive")
        if not (0.0 < self.active_ratio < 1.0):
            raise TraceError("active_ratio must be in (0, 1): think segments "
                             "are mandatory")
        if self.turns[0] < 1 or self.turns[1] < self.turns[0]:
            raise TraceError("turns range must be 1 <= lo <= hi")
        if self.kind not in ("cpu", "gpu", "api"):
            raise TraceError(f"unknown workload kind {self.kind!r}")
        if self.max_dop < 1:
            raise TraceError("max_dop must be >= 1")


def _dop_units(max_dop: int) -> tuple[int, ...]:
    units = [1]
    while units[-1] * 2 <= max_dop:
        units.append(units[-1] * 2)
    return tuple(units)


def _elasticity_table(units: Sequence[int], gamma: float) -> tuple[tuple[int, float], ...]:
    return tuple((m, m ** -gamma if m > 1 else 1.0) for m in units)


def _service_weights(n: int, skew: float) -> list[float]:
    w = [1.0 / (i + 1) ** skew for i in range(n)]
    total = sum(w)
    return [x / total for x in w]


def gen_trace(params: GenParams, seed: int) -> list[TrajectoryRec]:
    """Deterministic synthetic trace with a controlled per-trajectory
    active ratio and long-tailed reward actions."""
    params.validate()
    rng = random.Random(seed)
    weights = _service_weights(params.n_services, params.service_skew)
    services = [f"svc{i}" for i in range(params.n_services)]
    out: list[TrajectoryRec] = []
    for tid in range(params.n_trajectories):
        turns = rng.randint(*params.turns)
        acts: list[ActSeg] = []
        for _ in range(turns - 1):
            dur = rng.lognormvariate(*params.tool_dur)
            if params.kind == "gpu":
                svc = rng.choices(services, weights)[0]
                acts.append(ActSeg(params.resource, params.gpu_units, dur,
                                   service=svc))
            elif params.kind == "api":
                acts.append(ActSeg(params.resource, (1,), dur))
            else:
                acts.append(ActSeg(params.resource, (1,), dur))
        # final act: reward computation, long-tailed and usually scalable
        rdur = rng.lognormvariate(*params.reward_dur)
        scalable = rng.random() < params.scalable_fraction
        if params.kind == "gpu":
            units = params.gpu_units
            svc = rng.choices(services, weights)[0]
        elif params.kind == "api":
            units, svc, scalable = (1,), None, False
        else:
            units = _dop_units(params.max_dop) if scalable else (1,)
            svc = None
        gamma = rng.uniform(*params.gamma_range)
        acts.append(ActSeg(
            params.resource, units, rdur,
            elasticity=_elasticity_table(units, gamma) if scalable else (),
            profiled=scalable, service=svc,
        ))
        act_total = sum(a.true_dur for a in acts)
        think_total = act_total * (1.0 - params.active_ratio) / params.active_ratio
        shares = [rng.uniform(0.5, 1.5) for _ in acts]
        norm = sum(shares)
        segments: list[Segment] = []
        for share, act in zip(shares, acts):
            segments.append(ThinkSeg(dur=think_total * share / norm))
            segments.append(act)
        memory = rng.uniform(*params.memory_range)
        start = rng.uniform(0.0, params.arrival_spread) if params.arrival_spread > 0 else 0.0
        out.append(TrajectoryRec(id=tid, segments=tuple(segments),
                                 memory=memory, start=start))
    return out
