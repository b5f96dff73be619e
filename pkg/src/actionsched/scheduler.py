"""Elastic action scheduler: FCFS candidates, greedy eviction, heap estimate.

One invocation takes a snapshot of the waiting queue and manager states and
returns which actions to start now and with how many units.  Scalable
candidates sharing a key elasticity resource are shrunk from the tail while
the approximated completion-time objective keeps improving.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

from .dp import AllocationResult, BasicOperator, DpTask, FlatDpTable, dp_arrange, dp_task
from .gputopo import ChunkCounts, GpuDpOperator, gpu_prev
from .managers import BasicManager, CpuManager, GpuManager, ResourceManager
from .model import Action, InfeasibleError, eval_duration


class HistoricalStats:
    """Mean observed execution duration per service/resource, as a fallback
    duration estimate for actions without a profiled base duration."""

    def __init__(self, default_estimate: float = 1.0):
        self.default_estimate = default_estimate
        self._totals: dict[str, float] = {}
        self._counts: dict[str, int] = {}

    @staticmethod
    def key_for(action: Action) -> str:
        if action.service_id is not None:
            return f"svc:{action.service_id}"
        return f"rtype:{action.elasticity.key_resource}"

    def record(self, action: Action, exec_duration: float) -> None:
        key = self.key_for(action)
        self._totals[key] = self._totals.get(key, 0.0) + exec_duration
        self._counts[key] = self._counts.get(key, 0) + 1

    def estimate(self, action: Action) -> float:
        if action.base_duration is not None:
            return action.base_duration
        key = self.key_for(action)
        if self._counts.get(key):
            return self._totals[key] / self._counts[key]
        return self.default_estimate


def _min_duration(action: Action, stats: HistoricalStats) -> float:
    if action.scalable:
        spec = action.key_spec()
        return eval_duration(action.elasticity, action.base_duration, spec.min_units)
    return stats.estimate(action)


def _duration_at_choice(action: Action, d: int, stats: HistoricalStats) -> float:
    """Duration at the d-th smallest allowed unit (clamped), 1-based."""
    if not action.scalable:
        return stats.estimate(action)
    units = action.key_spec().units
    m = units[min(d, len(units)) - 1]
    return eval_duration(action.elasticity, action.base_duration, m)


def estimate(
    heap: Sequence[float],
    actions: Sequence[Action],
    depth: int,
    stats: Optional[HistoricalStats] = None,
) -> float:
    """Approximate summed completion times of queued actions.

    The first action explores its d-th smallest allocation for d=1..depth;
    every later action reuses the earliest-freed slot at minimum units.
    Heap timestamps are relative to "now".
    """
    if not actions:
        return 0.0
    stats = stats or HistoricalStats()
    best = float("inf")
    for d in range(1, depth + 1):
        work = list(heap)
        heapq.heapify(work)
        total = 0.0
        for i, action in enumerate(actions):
            ts = heapq.heappop(work) if work else 0.0
            dur = _duration_at_choice(action, d, stats) if i == 0 else _min_duration(action, stats)
            finish = ts + dur
            total += finish
            heapq.heappush(work, finish)
        if total < best:
            best = total
    return best


@dataclass
class PlannedAction:
    action: Action
    units: dict[int, int]  # resource type -> allocated units


@dataclass
class ScheduleDecision:
    selected: list[PlannedAction] = field(default_factory=list)
    deferred: list[Action] = field(default_factory=list)
    log: dict = field(default_factory=dict)


class _GroupArranger:
    """Exact DP objectives for every prefix of one key-resource group.

    Flat pools share bottom-up DP rows across prefixes; the GPU operator
    re-runs its memoized recursion per distinct reduced chunk state.
    """

    def __init__(self, manager: ResourceManager, scal_actions: Sequence[Action],
                 reserved_other: int):
        self.manager = manager
        self.tasks: list[DpTask] = [
            dp_task(a.elasticity, a.base_duration, self._clamped_spec(a))
            for a in scal_actions
        ]
        self.reserved_other = reserved_other
        self._flat_tables: dict[int, FlatDpTable] = {}

    def _clamped_spec(self, action: Action):
        spec = action.key_spec()
        if isinstance(self.manager, CpuManager):
            cap = self.manager.node_free_cores(action.trajectory_id)
            if cap is not None and cap < spec.max_units:
                units = tuple(u for u in spec.units if u <= cap) or spec.units[:1]
                return type(spec)(units)
        return spec

    def arrange(self, n_scal: int, fixed_min: int) -> AllocationResult:
        if n_scal == 0:
            return AllocationResult(0.0, (), ())
        if isinstance(self.manager, GpuManager):
            counts = self.manager._counts(self.manager.free_chunks)
            op = GpuDpOperator(counts)
            state: Optional[ChunkCounts] = op.current
            for m in self._reserved_sizes(fixed_min):
                state = gpu_prev(state, m) if state is not None else None
            if state is None:
                raise InfeasibleError("reserved minimums exceed free chunks")
            reduced = GpuDpOperator(state.counts)
            return dp_arrange(self.tasks[:n_scal], reduced)
        capacity = max(self.manager.remaining() - self.reserved_other - fixed_min, 0)
        table = self._flat_tables.get(capacity)
        if table is None:
            table = FlatDpTable(self.tasks, capacity)
            self._flat_tables[capacity] = table
        return table.best(n_scal)

    def _reserved_sizes(self, fixed_min: int) -> list[int]:
        # GPU reservations are power-of-two requests recorded individually
        sizes = list(self._gpu_reserved)
        return sizes

    _gpu_reserved: tuple[int, ...] = ()

    def set_gpu_reserved(self, sizes: Sequence[int]) -> None:
        self._gpu_reserved = tuple(sizes)


def _candidate_prefix(queue: Sequence[Action],
                      managers: Mapping[int, ResourceManager]) -> int:
    """Longest FCFS prefix every manager can host at minimum units."""

    def fits(n: int) -> bool:
        if n == 0:
            return True
        prefix = queue[:n]
        for rtype, manager in managers.items():
            involved = [a for a in prefix if a.cost.get(rtype) is not None]
            if involved and not manager.accommodate(involved):
                return False
        return True

    lo, hi = 0, len(queue)
    if fits(hi):
        return hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _relative_finishes(finishes: Sequence[float], now: float) -> list[float]:
    return [max(f - now, 0.0) for f in finishes]


def schedule(
    queue: Sequence[Action],
    managers: Mapping[int, ResourceManager],
    depth: int = 2,
    now: float = 0.0,
    inflight: Optional[Mapping[int, Sequence[float]]] = None,
    stats: Optional[HistoricalStats] = None,
) -> ScheduleDecision:
    """One scheduling pass over the waiting queue snapshot."""
    stats = stats or HistoricalStats()
    inflight = inflight or {}
    ordered = sorted(queue, key=Action.fcfs_key)
    decision = ScheduleDecision()
    if not ordered:
        return decision

    n = _candidate_prefix(ordered, managers)
    candidates = ordered[:n]
    decision.log = {"candidates": n, "groups": []}

    key_types = sorted({a.elasticity.key_resource for a in candidates})
    selected: list[PlannedAction] = []
    for rtype in key_types:
        group = [a for a in candidates if a.elasticity.key_resource == rtype]
        manager = managers.get(rtype)
        glog = {"resource": rtype, "size": len(group), "evicted": 0}
        if manager is None or all(not a.scalable for a in group):
            for a in group:
                selected.append(PlannedAction(a, _min_alloc(a)))
            glog["mode"] = "min-units"
            decision.log["groups"].append(glog)
            continue

        rest_tail = [a for a in ordered[n:] if a.elasticity.key_resource == rtype]
        reserved_other = sum(
            a.cost.min_units(rtype) for a in candidates
            if a.elasticity.key_resource != rtype
        )
        scal = [a for a in group if a.scalable]
        arranger = _GroupArranger(manager, scal, reserved_other)
        heap_seed = _relative_finishes(inflight.get(rtype, ()), now)

        def objective(prefix_len: int):
            prefix = group[:prefix_len]
            p_scal = [a for a in prefix if a.scalable]
            p_fixed = [a for a in prefix if not a.scalable]
            if isinstance(manager, GpuManager):
                reserved = [a.cost.min_units(rtype) for a in candidates
                            if a.elasticity.key_resource != rtype
                            and a.cost.get(rtype) is not None]
                reserved += [a.cost.min_units(rtype) for a in p_fixed]
                arranger.set_gpu_reserved(reserved)
            fixed_min = sum(a.cost.min_units(rtype) for a in p_fixed)
            result = arranger.arrange(len(p_scal), fixed_min)
            fixed_durs = [_min_duration(a, stats) for a in p_fixed]
            exact = result.total_duration + sum(fixed_durs)
            heap = heap_seed + list(result.per_task_durations) + fixed_durs
            rest = group[prefix_len:] + rest_tail
            return exact + estimate(heap, rest, depth, stats), result

        try:
            best_obj, best_result = objective(len(group))
        except InfeasibleError:
            for a in group:
                selected.append(PlannedAction(a, _min_alloc(a)))
            glog["mode"] = "min-units-infeasible"
            decision.log["groups"].append(glog)
            continue
        best_len = len(group)
        objectives = [best_obj]
        for t in range(1, len(group)):
            try:
                obj, result = objective(len(group) - t)
            except InfeasibleError:
                break
            if obj >= best_obj:
                break
            best_obj, best_result, best_len = obj, result, len(group) - t
            objectives.append(obj)

        prefix = group[:best_len]
        p_scal = [a for a in prefix if a.scalable]
        scal_units = dict(zip((a.id for a in p_scal), best_result.allocations))
        for a in prefix:
            units = _min_alloc(a)
            if a.id in scal_units:
                units[rtype] = scal_units[a.id]
            selected.append(PlannedAction(a, units))
        glog.update(mode="elastic", evicted=len(group) - best_len,
                    objectives=objectives)
        decision.log["groups"].append(glog)

    selected.sort(key=lambda p: p.action.fcfs_key())
    chosen_ids = {p.action.id for p in selected}
    decision.selected = selected
    decision.deferred = [a for a in ordered if a.id not in chosen_ids]
    return decision


def _min_alloc(action: Action) -> dict[int, int]:
    return {rtype: spec.min_units for rtype, spec in action.cost.entries}


def approx_objective(
    candidates: Sequence[Action],
    capacity: Union[int, ResourceManager],
    rest: Sequence[Action],
    depth: int,
    inflight_finishes: Sequence[float] = (),
    stats: Optional[HistoricalStats] = None,
) -> float:
    """Exact DP objective for the candidates plus heap estimate for the rest.

    ``capacity`` may be a flat unit count or a manager (whose DP operator is
    used).  Candidates must all be scalable.
    """
    stats = stats or HistoricalStats()
    if not candidates:
        return 0.0 + estimate(list(inflight_finishes), rest, depth, stats)
    tasks = [dp_task(a.elasticity, a.base_duration, a.key_spec()) for a in candidates]
    if isinstance(capacity, ResourceManager):
        operator = capacity.dp_operator()
    else:
        operator = BasicOperator(capacity)
    result = dp_arrange(tasks, operator)
    heap = list(inflight_finishes) + list(result.per_task_durations)
    return result.total_duration + estimate(heap, rest, depth, stats)
