"""Deterministic discrete-event simulator driving policies over traces.

All event arithmetic uses integer microseconds so the completion-time
identity (queue + overhead + exec = completion - submit) holds exactly.
The event queue is keyed by (time, sequence number); runs with identical
inputs produce byte-identical records and event logs.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .managers import (
    BasicManager,
    CpuManager,
    GpuManager,
    Placement,
    ResourceManager,
    build_manager,
)
from .model import (
    Action,
    AllocationUnavailable,
    ClusterSpec,
    CostVector,
    ElasticityProfile,
    SchedulingError,
    UnitSpec,
    eval_duration,
    from_usec,
    to_usec,
)
from .scheduler import HistoricalStats, PlannedAction, schedule
from .trace import ActSeg, ThinkSeg, TrajectoryRec

DEFAULT_TIMEOUT = 600.0


@dataclass
class SimRecord:
    """Per-action accounting row; all durations in integer microseconds."""

    action_id: int
    trajectory_id: int
    policy: str
    service: Optional[str]
    submit_us: int
    start_us: int
    end_us: int
    queue_us: int
    exec_us: int
    overhead_us: int
    units: int
    status: str  # done | timeout

    @property
    def act_us(self) -> int:
        return self.queue_us + self.exec_us + self.overhead_us

    @property
    def queue(self) -> float:
        return from_usec(self.queue_us)

    @property
    def exec(self) -> float:
        return from_usec(self.exec_us)

    @property
    def overhead(self) -> float:
        return from_usec(self.overhead_us)

    @property
    def act(self) -> float:
        return from_usec(self.act_us)


@dataclass
class _Run:
    action: Action
    traj: TrajectoryRec
    seg: ActSeg
    true_dur: float
    placements: list[Placement] = field(default_factory=list)
    units: int = 0
    start_us: int = 0
    overhead_us: int = 0
    exec_us: int = 0
    started: bool = False
    finished: bool = False


class Engine:
    """Single-threaded event loop; one policy instance per run."""

    def __init__(
        self,
        trace: Sequence[TrajectoryRec],
        cluster: ClusterSpec,
        policy: "BasePolicy",
        timeout: float = DEFAULT_TIMEOUT,
    ):
        self.trace = sorted(trace, key=lambda t: t.id)
        self.cluster = cluster
        self.policy = policy
        self.timeout_us = to_usec(timeout)
        self.now_us = 0
        self.records: list[SimRecord] = []
        self.events: list[dict] = []
        self.runs: dict[int, _Run] = {}
        self._heap: list = []
        self._seq = itertools.count()
        self._wakes: set[int] = set()
        self._traj_idx: dict[int, int] = {}
        self._dispatch_needed = False
        self._rtype_by_name = {r.name: r.type_id for r in cluster.resources}
        # pre-assign action ids in trace order so FCFS ties are reproducible
        self._action_ids: dict[tuple[int, int], int] = {}
        counter = itertools.count()
        for tr in self.trace:
            for i, seg in enumerate(tr.segments):
                if isinstance(seg, ActSeg):
                    self._action_ids[(tr.id, i)] = next(counter)
        policy.bind(self)

    # -- event plumbing ---------------------------------------------------

    def push(self, time_us: int, kind: str, payload=None) -> None:
        heapq.heappush(self._heap, (time_us, next(self._seq), kind, payload))

    def wake_at(self, time_us: int) -> None:
        if time_us not in self._wakes:
            self._wakes.add(time_us)
            self.push(time_us, "wake")

    def log(self, ev: str, **fields) -> None:
        self.events.append({"t": self.now_us, "ev": ev, **fields})

    def run(self) -> list[SimRecord]:
        for tr in self.trace:
            self.push(to_usec(tr.start), "arrive", tr)
        while self._heap:
            batch_time = self._heap[0][0]
            self.now_us = batch_time
            while self._heap and self._heap[0][0] == batch_time:
                _, _, kind, payload = heapq.heappop(self._heap)
                self._handle(kind, payload)
            if self._dispatch_needed:
                self._dispatch_needed = False
                self.policy.dispatch(self.now_us)
        return self.records

    def _handle(self, kind: str, payload) -> None:
        if kind == "arrive":
            if self.policy.on_traj_arrive(payload):
                self._start_traj(payload)
        elif kind == "start":
            self._start_traj(payload)
        elif kind == "seg":
            self._advance(payload)
        elif kind == "done":
            self._finish(payload)
        elif kind == "timeout":
            self._timeout(payload)
        elif kind == "wake":
            self._wakes.discard(self.now_us)
            self._dispatch_needed = True
        else:  # pragma: no cover - internal guard
            raise SchedulingError(f"unknown event kind {kind}")

    # -- trajectory progression -------------------------------------------

    def _start_traj(self, tr: TrajectoryRec) -> None:
        self._traj_idx[tr.id] = 0
        self._advance(tr)

    def _advance(self, tr: TrajectoryRec) -> None:
        idx = self._traj_idx[tr.id]
        if idx >= len(tr.segments):
            self.log("traj_end", traj=tr.id)
            self.policy.on_traj_end(tr, self.now_us)
            self._dispatch_needed = True
            return
        seg = tr.segments[idx]
        self._traj_idx[tr.id] = idx + 1
        if isinstance(seg, ThinkSeg):
            self.push(self.now_us + to_usec(seg.dur), "seg", tr)
        else:
            self._submit(tr, seg, idx)

    def _submit(self, tr: TrajectoryRec, seg: ActSeg, idx: int) -> None:
        aid = self._action_ids[(tr.id, idx)]
        rtype = self._rtype_by_name[seg.resource]
        rspec = self.cluster.resources[rtype]
        if rspec.kind in ("quota", "concurrency"):
            units: tuple[int, ...] = (seg.quota_units,)
        else:
            units = seg.units
        profiled = seg.profiled and bool(seg.elasticity)
        action = Action(
            id=aid,
            trajectory_id=tr.id,
            submit_time=from_usec(self.now_us),
            cost=CostVector.of({rtype: UnitSpec(tuple(units))}),
            elasticity=(
                ElasticityProfile.of(rtype, dict(seg.elasticity))
                if profiled else ElasticityProfile.unknown(rtype)
            ),
            base_duration=seg.true_dur if profiled else None,
            service_id=seg.service,
            memory=tr.memory if rspec.kind == "cpu" else 0.0,
        )
        run = _Run(action=action, traj=tr, seg=seg, true_dur=seg.true_dur)
        self.runs[aid] = run
        self.push(self.now_us + self.timeout_us, "timeout", run)
        self.log("submit", action=aid, traj=tr.id)
        self.policy.on_submit(run)
        self._dispatch_needed = True

    # -- action lifecycle -------------------------------------------------

    def default_exec(self, run: _Run, units: int) -> float:
        """Ground-truth execution duration at the allocated unit count."""
        if run.action.scalable and units > 1:
            return eval_duration(run.action.elasticity, run.true_dur, units)
        return run.true_dur

    def start_run(self, run: _Run, units: int, placements: list[Placement],
                  overhead_s: float, exec_s: float) -> None:
        run.started = True
        run.units = units
        run.placements = placements
        run.start_us = self.now_us
        run.overhead_us = to_usec(overhead_s)
        run.exec_us = max(to_usec(exec_s), 1)
        for p in placements:
            self.log("acquire", action=run.action.id,
                     resource=p.manager.spec.name, units=p.units, **p.detail)
            if p.detail.get("evicted") is not None:
                self.log("evict", action=run.action.id,
                         key=list(p.detail["evicted"]))
            if p.overhead > 0:
                self.log("restore", action=run.action.id,
                         overhead_us=to_usec(p.overhead))
        self.push(self.now_us + run.overhead_us + run.exec_us, "done", run)

    def _finish(self, run: _Run) -> None:
        run.finished = True
        self.records.append(SimRecord(
            action_id=run.action.id,
            trajectory_id=run.traj.id,
            policy=self.policy.name,
            service=run.action.service_id,
            submit_us=to_usec(run.action.submit_time),
            start_us=run.start_us,
            end_us=self.now_us,
            queue_us=run.start_us - to_usec(run.action.submit_time),
            exec_us=run.exec_us,
            overhead_us=run.overhead_us,
            units=run.units,
            status="done",
        ))
        for p in run.placements:
            self.log("release", action=run.action.id,
                     resource=p.manager.spec.name, units=p.units)
        self.policy.on_done(run, self.now_us)
        self._dispatch_needed = True
        self._advance(run.traj)

    def _timeout(self, run: _Run) -> None:
        if run.started or run.finished:
            return
        run.finished = True
        submit_us = to_usec(run.action.submit_time)
        self.records.append(SimRecord(
            action_id=run.action.id,
            trajectory_id=run.traj.id,
            policy=self.policy.name,
            service=run.action.service_id,
            submit_us=submit_us,
            start_us=submit_us + self.timeout_us,
            end_us=submit_us + self.timeout_us,
            queue_us=self.timeout_us,
            exec_us=0,
            overhead_us=0,
            units=0,
            status="timeout",
        ))
        self.log("timeout", action=run.action.id)
        self.policy.on_timeout(run)
        self._dispatch_needed = True
        self._advance(run.traj)


# -- policies -------------------------------------------------------------


class BasePolicy:
    name = "base"

    def bind(self, engine: Engine) -> None:
        self.engine = engine
        self.managers: dict[int, ResourceManager] = {
            r.type_id: build_manager(r) for r in engine.cluster.resources
        }

    def on_traj_arrive(self, tr: TrajectoryRec) -> bool:
        return True

    def on_submit(self, run: _Run) -> None:
        raise NotImplementedError

    def dispatch(self, now_us: int) -> None:
        pass

    def on_done(self, run: _Run, now_us: int) -> None:
        now_s = from_usec(now_us)
        for p in run.placements:
            p.manager.release(p, now_s)

    def on_timeout(self, run: _Run) -> None:
        pass

    def on_traj_end(self, tr: TrajectoryRec, now_us: int) -> None:
        for mgr in self.managers.values():
            if isinstance(mgr, CpuManager):
                mgr.end_trajectory(tr.id)

    def _sync_managers(self, now_us: int) -> None:
        now_s = from_usec(now_us)
        for mgr in self.managers.values():
            mgr.sync(now_s)

    def _arm_quota_wake(self, queued: Sequence[Action], now_us: int) -> None:
        """Re-trigger dispatch at the next quota window boundary when actions
        stay queued behind an exhausted (or insufficient) window."""
        now_s = from_usec(now_us)
        for rtype, mgr in self.managers.items():
            if isinstance(mgr, BasicManager) and mgr.mode == "quota":
                if any(a.cost.get(rtype) is not None for a in queued):
                    self.engine.wake_at(to_usec(mgr.next_window_start(now_s)))


class ElasticActionLevel(BasePolicy):
    """Action-level elastic policy: pooled managers plus the DP scheduler."""

    def __init__(self, depth: int = 2, default_estimate: float = 1.0):
        self.depth = depth
        self.default_estimate = default_estimate
        self.name = "elastic"

    def bind(self, engine: Engine) -> None:
        super().bind(engine)
        self.queue: list[_Run] = []
        self.by_id: dict[int, _Run] = {}
        self.stats = HistoricalStats(self.default_estimate)
        self.inflight: dict[int, dict[int, float]] = {}

    def on_submit(self, run: _Run) -> None:
        self.queue.append(run)
        self.by_id[run.action.id] = run

    def dispatch(self, now_us: int) -> None:
        if not self.queue:
            return
        self._sync_managers(now_us)
        now_s = from_usec(now_us)
        actions = [r.action for r in self.queue]
        inflight = {rt: list(m.values()) for rt, m in self.inflight.items() if m}
        decision = schedule(actions, self.managers, self.depth, now_s,
                            inflight, self.stats)
        if decision.selected:
            self.engine.log("decision",
                            selected=[p.action.id for p in decision.selected],
                            detail=decision.log)
        started: set[int] = set()
        for planned in decision.selected:
            run = self.by_id[planned.action.id]
            got = self._try_acquire(planned, now_s)
            if got is None:
                self.engine.log("defer", action=planned.action.id)
                continue
            placements, key_units = got
            overhead = sum(p.overhead for p in placements)
            exec_s = self.engine.default_exec(run, key_units)
            self.engine.start_run(run, key_units, placements, overhead, exec_s)
            finish = now_s + overhead + exec_s
            for rtype in planned.units:
                self.inflight.setdefault(rtype, {})[run.action.id] = finish
            started.add(run.action.id)
        if started:
            self.queue = [r for r in self.queue if r.action.id not in started]
        self._arm_quota_wake([r.action for r in self.queue], now_us)

    def _try_acquire(self, planned: PlannedAction, now_s: float):
        """Acquire every resource, stepping the key allocation down through
        smaller allowed units when topology rejects the planned one."""
        action = planned.action
        key_rt = action.elasticity.key_resource
        key_spec = action.cost.get(key_rt)
        target = planned.units.get(key_rt)
        if key_spec is not None and target is not None:
            ladder = [u for u in reversed(key_spec.units) if u <= target]
        else:
            ladder = [None]
        for ku in ladder:
            placements: list[Placement] = []
            failed = False
            for rtype in sorted(planned.units):
                units = ku if (rtype == key_rt and ku is not None) else planned.units[rtype]
                try:
                    placements.append(self.managers[rtype].acquire(action, units, now_s))
                except AllocationUnavailable:
                    failed = True
                    break
            if failed:
                for p in placements:
                    p.manager.release(p, now_s)
                continue
            if ku is not None and ku != target:
                self.engine.log("degrade", action=action.id, want=target, got=ku)
            return placements, (ku if ku is not None else target or 1)
        return None

    def on_done(self, run: _Run, now_us: int) -> None:
        super().on_done(run, now_us)
        self.stats.record(run.action, from_usec(run.exec_us))
        self.by_id.pop(run.action.id, None)
        for m in self.inflight.values():
            m.pop(run.action.id, None)

    def on_timeout(self, run: _Run) -> None:
        self.queue = [r for r in self.queue if r.action.id != run.action.id]
        self.by_id.pop(run.action.id, None)


class FixedDoP(BasePolicy):
    """FCFS head-of-line baseline granting a fixed degree of parallelism."""

    def __init__(self, dop: int):
        if dop < 1:
            raise SchedulingError("dop must be >= 1")
        self.dop = dop
        self.name = f"fixed-dop-{dop}"

    def bind(self, engine: Engine) -> None:
        super().bind(engine)
        self.queue: list[_Run] = []

    def on_submit(self, run: _Run) -> None:
        self.queue.append(run)

    def _units_for(self, action: Action, rtype: int, spec: UnitSpec) -> int:
        if rtype == action.elasticity.key_resource:
            allowed = [u for u in spec.units if u <= self.dop]
            return max(allowed) if allowed else spec.min_units
        return spec.min_units

    def dispatch(self, now_us: int) -> None:
        self._sync_managers(now_us)
        now_s = from_usec(now_us)
        while self.queue:
            run = self.queue[0]
            action = run.action
            placements: list[Placement] = []
            key_units = 1
            blocked = False
            for rtype, spec in action.cost.entries:
                units = self._units_for(action, rtype, spec)
                if rtype == action.elasticity.key_resource:
                    key_units = units
                try:
                    placements.append(self.managers[rtype].acquire(action, units, now_s))
                except AllocationUnavailable:
                    blocked = True
                    break
            if blocked:
                for p in placements:
                    p.manager.release(p, now_s)
                break
            overhead = sum(p.overhead for p in placements)
            exec_s = self.engine.default_exec(run, key_units)
            self.engine.start_run(run, key_units, placements, overhead, exec_s)
            self.queue.pop(0)
        self._arm_quota_wake([r.action for r in self.queue], now_us)

    def on_timeout(self, run: _Run) -> None:
        self.queue = [r for r in self.queue if r.action.id != run.action.id]


class TrajectoryStatic(BasePolicy):
    """Pod-per-trajectory baseline: reserve minimum resources for the whole
    trajectory lifetime.

    With ``half_core`` (the default), CPU pods hold half a core (two pods
    share one core) and executions run at twice their one-core duration;
    otherwise each pod holds a full core.  GPU pods hold the trajectory's
    largest minimum request and stay warm.  Quota resources are still
    consumed per action.
    """

    def __init__(self, half_core: bool = True):
        self.half_core = half_core
        self.name = "trajectory-static"

    def bind(self, engine: Engine) -> None:
        super().bind(engine)
        self.free: dict[int, int] = {}
        for r in engine.cluster.resources:
            if r.kind == "cpu":
                pods_per_core = 2 if self.half_core else 1
                self.free[r.type_id] = r.total_units() * pods_per_core
            elif r.kind == "gpu":
                self.free[r.type_id] = r.total_units()
        self.pending: list[TrajectoryRec] = []
        self.reserved: dict[int, dict[int, int]] = {}
        self.quota_queue: list[_Run] = []

    def _needs(self, tr: TrajectoryRec) -> dict[int, int]:
        needs: dict[int, int] = {}
        for seg in tr.acts():
            rtype = self.engine._rtype_by_name[seg.resource]
            kind = self.engine.cluster.resources[rtype].kind
            if kind == "cpu":
                needs[rtype] = max(needs.get(rtype, 0), 1)
            elif kind == "gpu":
                needs[rtype] = max(needs.get(rtype, 0), min(seg.units))
        return needs

    def on_traj_arrive(self, tr: TrajectoryRec) -> bool:
        if self.pending:
            self.pending.append(tr)
            return False
        needs = self._needs(tr)
        if all(self.free.get(rt, 0) >= n for rt, n in needs.items()):
            for rt, n in needs.items():
                self.free[rt] -= n
            self.reserved[tr.id] = needs
            return True
        self.pending.append(tr)
        return False

    def on_submit(self, run: _Run) -> None:
        rtype = run.action.cost.types()[0]
        rspec = self.engine.cluster.resources[rtype]
        if rspec.kind in ("quota", "concurrency"):
            self.quota_queue.append(run)
            return
        if rspec.kind == "cpu":
            # a half-core pod takes twice the one-core duration
            slowdown = 2.0 if self.half_core else 1.0
            self.engine.start_run(run, 1, [], 0.0, slowdown * run.true_dur)
            return
        dop = self.reserved.get(run.traj.id, {}).get(rtype, 1)
        exec_s = self.engine.default_exec(run, dop)
        self.engine.start_run(run, dop, [], 0.0, exec_s)

    def dispatch(self, now_us: int) -> None:
        self._sync_managers(now_us)
        now_s = from_usec(now_us)
        while self.quota_queue:
            run = self.quota_queue[0]
            rtype = run.action.cost.types()[0]
            units = run.action.cost.min_units(rtype)
            try:
                placement = self.managers[rtype].acquire(run.action, units, now_s)
            except AllocationUnavailable:
                break
            exec_s = self.engine.default_exec(run, 1)
            self.engine.start_run(run, units, [placement], placement.overhead, exec_s)
            self.quota_queue.pop(0)
        self._arm_quota_wake([r.action for r in self.quota_queue], now_us)

    def on_timeout(self, run: _Run) -> None:
        self.quota_queue = [r for r in self.quota_queue if r.action.id != run.action.id]

    def on_traj_end(self, tr: TrajectoryRec, now_us: int) -> None:
        super().on_traj_end(tr, now_us)
        needs = self.reserved.pop(tr.id, None)
        if needs:
            for rt, n in needs.items():
                self.free[rt] += n
        admitted = 0
        for nxt in self.pending:
            need = self._needs(nxt)
            if not all(self.free.get(rt, 0) >= n for rt, n in need.items()):
                break
            for rt, n in need.items():
                self.free[rt] -= n
            self.reserved[nxt.id] = need
            self.engine.push(now_us, "start", nxt)
            admitted += 1
        self.pending = self.pending[admitted:]


class DedicatedServices(BasePolicy):
    """Fixed GPU slice per service; each slice serves one action at a time,
    always warm (zero restore overhead)."""

    def __init__(self, gpus_per_service: int = 4):
        if gpus_per_service < 1:
            raise SchedulingError("gpus_per_service must be >= 1")
        self.gpus_per_service = gpus_per_service
        self.name = f"dedicated-{gpus_per_service}"

    def bind(self, engine: Engine) -> None:
        super().bind(engine)
        gpu_specs = [r for r in engine.cluster.resources if r.kind == "gpu"]
        if len(gpu_specs) != 1:
            raise SchedulingError("dedicated policy needs exactly one GPU resource")
        spec = gpu_specs[0]
        services = [s.service_id for s in spec.services]
        if not services:
            raise SchedulingError("dedicated policy needs a service catalog")
        if len(services) * self.gpus_per_service > spec.total_units():
            raise SchedulingError("not enough GPUs for dedicated slices")
        self.busy: dict[str, Optional[int]] = {s: None for s in services}
        self.queues: dict[str, list[_Run]] = {s: [] for s in services}
        self.svc_of: dict[int, str] = {}

    def on_submit(self, run: _Run) -> None:
        svc = run.action.service_id
        if svc is None or svc not in self.queues:
            raise SchedulingError(f"action {run.action.id} has no dedicated slice")
        self.queues[svc].append(run)
        self.svc_of[run.action.id] = svc

    def dispatch(self, now_us: int) -> None:
        for svc in self.queues:
            if self.busy[svc] is not None or not self.queues[svc]:
                continue
            run = self.queues[svc].pop(0)
            spec = run.action.key_spec()
            allowed = [u for u in spec.units if u <= self.gpus_per_service]
            units = max(allowed) if allowed else spec.min_units
            exec_s = self.engine.default_exec(run, units)
            self.busy[svc] = run.action.id
            self.engine.start_run(run, units, [], 0.0, exec_s)

    def on_done(self, run: _Run, now_us: int) -> None:
        super().on_done(run, now_us)
        svc = self.svc_of.pop(run.action.id, None)
        if svc is not None and self.busy.get(svc) == run.action.id:
            self.busy[svc] = None

    def on_timeout(self, run: _Run) -> None:
        svc = self.svc_of.pop(run.action.id, None)
        if svc is not None:
            self.queues[svc] = [r for r in self.queues[svc]
                                if r.action.id != run.action.id]


# -- entry points and summaries -------------------------------------------


def run(trace: Sequence[TrajectoryRec], cluster: ClusterSpec, policy: BasePolicy,
        timeout: float = DEFAULT_TIMEOUT) -> tuple[list[SimRecord], list[dict]]:
    """Run one policy over a trace; returns (records, event log)."""
    engine = Engine(trace, cluster, policy, timeout=timeout)
    records = engine.run()
    return records, engine.events


def _percentile(sorted_vals: Sequence[float], p: float) -> float:
    """Nearest-rank percentile on a pre-sorted list."""
    rank = max(math.ceil(p / 100.0 * len(sorted_vals)), 1)
    return sorted_vals[rank - 1]


def summarize(records: Sequence[SimRecord], window: float = 0.0) -> dict:
    """Means, percentiles, and optional tumbling-window series over ACT."""
    if not records:
        raise SchedulingError("no records to summarize")
    n = len(records)
    acts = sorted(r.act for r in records)
    summary = {
        "count": n,
        "timeouts": sum(1 for r in records if r.status == "timeout"),
        "mean_act": sum(acts) / n,
        "p50_act": _percentile(acts, 50),
        "p90_act": _percentile(acts, 90),
        "p99_act": _percentile(acts, 99),
        "mean_queue": sum(r.queue for r in records) / n,
        "mean_exec": sum(r.exec for r in records) / n,
        "mean_overhead": sum(r.overhead for r in records) / n,
        "makespan": from_usec(max(r.end_us for r in records)),
    }
    if window > 0:
        win_us = to_usec(window)
        buckets: dict[int, list[float]] = {}
        for r in records:
            buckets.setdefault(r.end_us // win_us, []).append(r.act)
        summary["windows"] = [
            {"start": from_usec(k * win_us), "count": len(v),
             "mean_act": sum(v) / len(v)}
            for k, v in sorted(buckets.items())
        ]
    return summary


POLICY_NAMES = ("elastic", "trajectory-static", "fixed-dop", "dedicated")


def make_policy(name: str, depth: int = 2, dop: int = 4,
                gpus_per_service: int = 4) -> BasePolicy:
    if name == "elastic":
        return ElasticActionLevel(depth=depth)
    if name == "trajectory-static":
        return TrajectoryStatic()
    if name == "fixed-dop":
        return FixedDoP(dop)
    if name.startswith("fixed-dop-"):
        return FixedDoP(int(name.rsplit("-", 1)[1]))
    if name == "dedicated":
        return DedicatedServices(gpus_per_service)
    if name.startswith("dedicated-"):
        return DedicatedServices(int(name.rsplit("-", 1)[1]))
    raise SchedulingError(f"unknown policy {name!r}")
