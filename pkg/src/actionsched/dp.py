"""Optimal discrete allocation among elastic tasks via a pluggable DP operator.

The DP is topology-agnostic: an operator maps abstract state indices and
implements the transition primitives.  The flat-pool (basic) operator gets a
vectorized fast path so scheduling stays inside its latency budget; arbitrary
operators (e.g. the GPU chunk operator) go through a memoized top-down
recursion over reachable states only.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .model import (
    ElasticityProfile,
    InfeasibleError,
    UnitSpec,
    eval_duration,
)


@dataclass(frozen=True)
class DpTask:
    """One schedulable task: its allowed units and duration at each choice."""

    units: tuple[int, ...]
    durations: tuple[float, ...]  # parallel to units

    def duration(self, k: int) -> float:
        return self.durations[self.units.index(k)]


def dp_task(profile: ElasticityProfile, base_duration: float, spec: UnitSpec) -> DpTask:
    units = spec.units
    return DpTask(units, tuple(eval_duration(profile, base_duration, m) for m in units))


@dataclass(frozen=True)
class AllocationResult:
    total_duration: float
    allocations: tuple[int, ...]
    per_task_durations: tuple[float, ...]


class DpOperator(ABC):
    """State-transition primitives used by dp_arrange."""

    @abstractmethod
    def start(self, specs: Sequence[UnitSpec]) -> int:
        """Minimal state required to host every task at minimum units."""

    @abstractmethod
    def end(self, specs: Sequence[UnitSpec]) -> int:
        """The readout state: everything currently available."""

    @abstractmethod
    def prev(self, state: int, k: int) -> Optional[int]:
        """State left for earlier tasks after one task takes k units."""

    def state_ok(self, state: Optional[int]) -> bool:
        return state is not None and state >= 0


class BasicOperator(DpOperator):
    """Flat pool of interchangeable units."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = capacity

    def start(self, specs: Sequence[UnitSpec]) -> int:
        return sum(s.min_units for s in specs)

    def end(self, specs: Sequence[UnitSpec]) -> int:
        return min(self.capacity, sum(s.max_units for s in specs))

    def prev(self, state: int, k: int) -> Optional[int]:
        r = state - k
        return r if r >= 0 else None

    def is_valid(self, r: int, specs: Sequence[UnitSpec]) -> bool:
        """Exact-cover test: r is a sum drawing one allowed unit per spec."""
        return self._cover(r, tuple(s.units for s in specs))

    @staticmethod
    @lru_cache(maxsize=65536)
    def _cover(r: int, unit_sets: tuple[tuple[int, ...], ...]) -> bool:
        if r < 0:
            return False
        if not unit_sets:
            return r == 0
        return any(
            u <= r and BasicOperator._cover(r - u, unit_sets[1:])
            for u in unit_sets[0]
        )


def basic_operator(capacity: int) -> BasicOperator:
    return BasicOperator(capacity)


INF = float("inf")


class FlatDpTable:
    """Bottom-up DP rows over a flat pool, shared across task prefixes.

    Row i holds, for each unit budget j, the minimum total duration of the
    first i tasks using at most j units.  The greedy-eviction loop reads a
    prefix's optimum straight out of row i without recomputation.
    """

    def __init__(self, tasks: Sequence[DpTask], capacity: int):
        self.tasks = list(tasks)
        self.capacity = capacity
        n = capacity
        row = np.zeros(n + 1)
        self.rows = [row]
        self.choices: list[np.ndarray] = []
        for task in self.tasks:
            cand = np.full((len(task.units), n + 1), INF)
            for idx, (k, dur) in enumerate(zip(task.units, task.durations)):
                if k <= n:
                    cand[idx, k:] = row[: n + 1 - k] + dur
            best_idx = np.argmin(cand, axis=0)
            new_row = cand[best_idx, np.arange(n + 1)]
            self.rows.append(new_row)
            self.choices.append(best_idx)
            row = new_row

    def best(self, prefix: int) -> AllocationResult:
        """Optimal total and back-traced allocation for tasks[:prefix]."""
        total = float(self.rows[prefix][self.capacity])
        if total == INF:
            raise InfeasibleError(
                f"{prefix} tasks cannot fit in {self.capacity} units at minimums"
            )
        alloc: list[int] = []
        j = self.capacity
        for i in range(prefix, 0, -1):
            task = self.tasks[i - 1]
            k = task.units[self.choices[i - 1][j]]
            alloc.append(k)
            j -= k
        alloc.reverse()
        durs = tuple(t.duration(k) for t, k in zip(self.tasks, alloc))
        return AllocationResult(total, tuple(alloc), durs)


def _dp_arrange_generic(tasks: Sequence[DpTask], operator: DpOperator) -> AllocationResult:
    specs = [UnitSpec(t.units) for t in tasks]
    end_state = operator.end(specs)
    m = len(tasks)
    memo: dict[tuple[int, int], float] = {}
    choice: dict[tuple[int, int], int] = {}

    def solve(i: int, state: int) -> float:
        if i == 0:
            return 0.0
        key = (i, state)
        if key in memo:
            return memo[key]
        best = INF
        best_k = -1
        task = tasks[i - 1]
        for k, dur in zip(task.units, task.durations):
            p = operator.prev(state, k)
            if not operator.state_ok(p):
                continue
            v = solve(i - 1, p) + dur
            if v < best:
                best, best_k = v, k
        memo[key] = best
        choice[key] = best_k
        return best

    total = solve(m, end_state)
    if total == INF:
        raise InfeasibleError("tasks cannot fit the available state at minimum units")
    alloc: list[int] = []
    state = end_state
    for i in range(m, 0, -1):
        k = choice[(i, state)]
        alloc.append(k)
        state = operator.prev(state, k)
    alloc.reverse()
    durs = tuple(t.duration(k) for t, k in zip(tasks, alloc))
    return AllocationResult(total, tuple(alloc), durs)


def dp_arrange(tasks: Sequence[DpTask], operator: DpOperator) -> AllocationResult:
    """Minimize the summed durations over all feasible discrete allocations.

    Raises InfeasibleError when the state cannot host every task at its
    minimum units.
    """
    if not tasks:
        return AllocationResult(0.0, (), ())
    if isinstance(operator, BasicOperator):
        return FlatDpTable(tasks, operator.capacity).best(len(tasks))
    return _dp_arrange_generic(tasks, operator)


def brute_force_arrange(
    tasks: Sequence[DpTask],
    capacity: int,
    feasible: Optional[Callable[[Sequence[int]], bool]] = None,
) -> Optional[AllocationResult]:
    """Exhaustive enumeration oracle over every feasible unit tuple.

    Independent of the DP path; used by tests and the oracle CLI command.
    Returns None when no allocation fits.
    """
    best: Optional[AllocationResult] = None

    def rec(i: int, used: int, alloc: list[int], total: float) -> None:
        nonlocal best
        if i == len(tasks):
            if feasible is not None and not feasible(alloc):
                return
            if best is None or total < best.total_duration:
                durs = tuple(t.duration(k) for t, k in zip(tasks, alloc))
                best = AllocationResult(total, tuple(alloc), durs)
            return
        task = tasks[i]
        for k, dur in zip(task.units, task.durations):
            if used + k > capacity:
                continue
            alloc.append(k)
            rec(i + 1, used + k, alloc, total + dur)
            alloc.pop()

    rec(0, 0, [], 0.0)
    return best
