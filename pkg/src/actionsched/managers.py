"""Simulated resource managers behind one uniform interface.

Each manager owns mutable state driven by the simulator's event loop and
answers four questions for the scheduler: can a candidate set fit at
minimums (topology-aware), grant an allocation, release it, and how many
units remain.  Managers also hand out the DP operator matching their
topology.
"""
from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .dp import BasicOperator, DpOperator
from .gputopo import (
    CacheKey,
    Chunk,
    chunk_allocate,
    chunk_free,
    count_free,
    force_coalesce,
    GpuDpOperator,
    request_level,
)
from .model import (
    Action,
    AllocationUnavailable,
    ConsistencyError,
    CpuNodeSpec,
    ResourceSpec,
    SchedulingError,
)


@dataclass
class Placement:
    """Result of a successful acquire; handed back verbatim at release."""

    manager: "ResourceManager"
    action_id: int
    units: int
    overhead: float  # seconds of restore / fork cost charged to this action
    detail: dict = field(default_factory=dict)
    released: bool = False


class ResourceManager(ABC):
    def __init__(self, spec: ResourceSpec):
        self.spec = spec
        self.resource_type = spec.type_id

    def sync(self, now: float) -> None:
        """Advance time-dependent state (e.g. quota windows) to `now`."""

    @abstractmethod
    def accommodate(self, actions: Sequence[Action]) -> bool:
        """Whether every action fits at minimum units, topology included."""

    @abstractmethod
    def acquire(self, action: Action, units: int, now: float) -> Placement:
        """Grant units to the action or raise AllocationUnavailable."""

    @abstractmethod
    def remaining(self) -> int:
        pass

    @abstractmethod
    def dp_operator(self) -> DpOperator:
        pass

    def release(self, placement: Placement, now: float) -> None:
        if placement.released:
            raise ConsistencyError(f"double release for action {placement.action_id}")
        placement.released = True
        self._release(placement, now)

    def _release(self, placement: Placement, now: float) -> None:
        pass

    def _min_units(self, action: Action) -> int:
        spec = action.cost.get(self.resource_type)
        return spec.min_units if spec is not None else 0


class BasicManager(ResourceManager):
    """Concurrency caps and tumbling-window quotas for unscalable resources."""

    def __init__(self, spec: ResourceSpec):
        super().__init__(spec)
        if spec.kind not in ("concurrency", "quota", "flat"):
            raise SchedulingError(f"unsupported basic kind {spec.kind}")
        self.mode = "quota" if spec.kind == "quota" else "concurrency"
        self.limit = spec.capacity
        self.window = spec.window
        self.in_flight = 0
        self.window_start = 0.0
        self.window_usage = 0

    def sync(self, now: float) -> None:
        self._roll(now)

    def _roll(self, now: float) -> None:
        if self.mode != "quota":
            return
        # windows tumble at fixed boundaries from simulation start
        periods = int(now // self.window)
        start = periods * self.window
        if start > self.window_start:
            self.window_start = start
            self.window_usage = 0

    def headroom(self, now: Optional[float] = None) -> int:
        if self.mode == "concurrency":
            return self.limit - self.in_flight
        if now is not None:
            self._roll(now)
        return self.limit - self.window_usage

    def accommodate(self, actions: Sequence[Action]) -> bool:
        need = sum(self._min_units(a) for a in actions)
        return need <= self.headroom()

    def acquire(self, action: Action, units: int, now: float) -> Placement:
        self._roll(now)
        if self.mode == "concurrency":
            if self.in_flight + units > self.limit:
                raise AllocationUnavailable("concurrency limit reached")
            self.in_flight += units
        else:
            if self.window_usage + units > self.limit:
                raise AllocationUnavailable("quota window exhausted")
            self.window_usage += units
        return Placement(self, action.id, units, self.spec.exec_overhead)

    def _release(self, placement: Placement, now: float) -> None:
        if self.mode == "concurrency":
            self.in_flight -= placement.units

    def remaining(self) -> int:
        return self.headroom()

    def dp_operator(self) -> DpOperator:
        return BasicOperator(self.remaining())

    def next_window_start(self, now: float) -> float:
        if self.mode != "quota":
            raise SchedulingError("not a quota-mode manager")
        return (int(now // self.window) + 1) * self.window


@dataclass
class CpuNodeState:
    node_id: int
    domains: list[set[int]]  # free core ids per NUMA domain
    total_cores: int
    memory: float
    free_memory: float
    reservations: dict[int, float] = field(default_factory=dict)  # trajectory -> memory

    def free_cores(self) -> int:
        return sum(len(d) for d in self.domains)


def cpu_place_trajectory(
    nodes: Sequence[CpuNodeState], memory: float, min_cores: int
) -> Optional[int]:
    """Memory load-balancing placement: most free memory wins, ties by id."""
    eligible = [
        n for n in nodes if n.free_cores() >= min_cores and n.free_memory >= memory
    ]
    if not eligible:
        return None
    best = max(eligible, key=lambda n: (n.free_memory, -n.node_id))
    return best.node_id


def cpu_allocate_cores(node: CpuNodeState, m: int) -> list[int]:
    """NUMA-preferring core pick: one domain if it fits, else spill greedily."""
    if m > node.free_cores():
        raise AllocationUnavailable(f"node {node.node_id} has {node.free_cores()} free")
    order = sorted(range(len(node.domains)), key=lambda i: (-len(node.domains[i]), i))
    chosen: list[int] = []
    single = next((i for i in order if len(node.domains[i]) >= m), None)
    domains = [single] if single is not None else order
    need = m
    for di in domains:
        take = sorted(node.domains[di])[:need]
        node.domains[di] -= set(take)
        chosen.extend(take)
        need -= len(take)
        if need == 0:
            break
    return chosen


class CpuManager(ResourceManager):
    """Core/memory manager: per-action core allocation, per-trajectory memory."""

    def __init__(self, spec: ResourceSpec):
        super().__init__(spec)
        self.nodes = [
            CpuNodeState(
                node_id=i,
                domains=[set(cores) for cores in n.domain_cores()],
                total_cores=n.cores,
                memory=n.memory,
                free_memory=n.memory,
            )
            for i, n in enumerate(spec.cpu_nodes)
        ]
        self.trajectory_nodes: dict[int, int] = {}

    def _sim_place(self, actions: Sequence[Action], free: list[int],
                   memory: list[float]) -> bool:
        """Greedy placement mirror of acquire, on scratch per-node counters."""
        for a in actions:
            m = self._min_units(a)
            if m == 0:
                continue
            pin = self.trajectory_nodes.get(a.trajectory_id, a.node_pin)
            if pin is not None:
                if free[pin] < m:
                    return False
                free[pin] -= m
                continue
            candidates = [
                i for i in range(len(free))
                if free[i] >= m and memory[i] >= a.memory
            ]
            if not candidates:
                return False
            node = max(candidates, key=lambda i: (memory[i], -i))
            free[node] -= m
            memory[node] -= a.memory
        return True

    def accommodate(self, actions: Sequence[Action]) -> bool:
        free = [n.free_cores() for n in self.nodes]
        memory = [n.free_memory for n in self.nodes]
        return self._sim_place(actions, free, memory)

    def acquire(self, action: Action, units: int, now: float) -> Placement:
        node_id = self.trajectory_nodes.get(action.trajectory_id, action.node_pin)
        if node_id is None:
            node_id = cpu_place_trajectory(self.nodes, action.memory, units)
            if node_id is None:
                raise AllocationUnavailable("no node fits cores + trajectory memory")
            node = self.nodes[node_id]
            node.free_memory -= action.memory
            node.reservations[action.trajectory_id] = action.memory
            self.trajectory_nodes[action.trajectory_id] = node_id
        node = self.nodes[node_id]
        cores = cpu_allocate_cores(node, units)
        return Placement(
            self, action.id, units, self.spec.exec_overhead,
            detail={"node": node_id, "cores": cores},
        )

    def _release(self, placement: Placement, now: float) -> None:
        node = self.nodes[placement.detail["node"]]
        cores = placement.detail["cores"]
        for core in cores:
            for di, dom_cores in enumerate(self._domain_ranges(node)):
                if core in dom_cores:
                    node.domains[di].add(core)
                    break

    def _domain_ranges(self, node: CpuNodeState) -> list[range]:
        spec = self.spec.cpu_nodes[node.node_id]
        return [range(c[0], c[-1] + 1) for c in spec.domain_cores()]

    def end_trajectory(self, trajectory_id: int) -> None:
        node_id = self.trajectory_nodes.pop(trajectory_id, None)
        if node_id is None:
            return
        node = self.nodes[node_id]
        node.free_memory += node.reservations.pop(trajectory_id, 0.0)

    def remaining(self) -> int:
        return sum(n.free_cores() for n in self.nodes)

    def node_free_cores(self, trajectory_id: int) -> Optional[int]:
        node_id = self.trajectory_nodes.get(trajectory_id)
        if node_id is None:
            return None
        return self.nodes[node_id].free_cores()

    def dp_operator(self) -> DpOperator:
        return BasicOperator(self.remaining())


class GpuManager(ResourceManager):
    """Chunked GPU pool with service caching and LRU cold-cache reuse.

    Services stay resident in device memory after execution; a cold
    allocation pays the service's restore cost, a warm hit pays nothing.
    Different DoPs of one service are distinct cache keys.
    """

    def __init__(self, spec: ResourceSpec):
        super().__init__(spec)
        self.free_chunks: list[Chunk] = [
            Chunk(node=i, start=0, level=3) for i in range(spec.gpu_nodes)
        ]
        self.busy: dict[int, Chunk] = {}  # action id -> chunk
        self.restore_costs: dict[CacheKey, float] = {}
        for svc in spec.services:
            for dop in svc.dops:
                cost = svc.restore_cost if svc.restore_cost is not None else spec.default_restore
                self.restore_costs[(svc.service_id, dop)] = cost

    def _counts(self, chunks: Sequence[Chunk]) -> list[int]:
        counts = [0, 0, 0, 0]
        for c in chunks:
            counts[c.level] += 1
        return counts

    def _can_place(self, sizes: Sequence[int], chunks: Sequence[Chunk]) -> bool:
        """Best-fit-decreasing of power-of-two requests into per-node free sets."""
        free_per_node: dict[int, int] = {}
        frag: dict[int, list[int]] = {}
        for c in chunks:
            free_per_node[c.node] = free_per_node.get(c.node, 0) + c.size
            frag.setdefault(c.node, []).append(c.size)
        # within a node any free devices can be re-coalesced into aligned
        # chunks, but only up to the largest aligned block the layout allows
        node_caps: dict[int, list[int]] = {}
        for node, pieces in frag.items():
            node_caps[node] = self._aligned_blocks(
                [c for c in chunks if c.node == node]
            )
        for size in sorted(sizes, reverse=True):
            placed = False
            candidates = sorted(
                (n for n, blocks in node_caps.items() if any(b >= size for b in blocks)),
                key=lambda n: (sum(node_caps[n]), n),
            )
            for node in candidates:
                blocks = node_caps[node]
                usable = min(b for b in blocks if b >= size)
                blocks.remove(usable)
                leftover = usable - size
                for s in (4, 2, 1):
                    if leftover & s:
                        blocks.append(s)
                placed = True
                break
            if not placed:
                return False
        return True

    @staticmethod
    def _aligned_blocks(chunks: Sequence[Chunk]) -> list[int]:
        """Maximal aligned free blocks on one node after full coalescing."""
        devices = sorted(d for c in chunks for d in c.devices())
        free = set(devices)
        blocks: list[int] = []
        for size in (8, 4, 2, 1):
            for start in range(0, 8, size):
                block = set(range(start, start + size))
                if block <= free:
                    free -= block
                    blocks.append(size)
        return blocks

    def accommodate(self, actions: Sequence[Action]) -> bool:
        sizes = [self._min_units(a) for a in actions if self._min_units(a) > 0]
        return self._can_place(sizes, self.free_chunks)

    def can_fit(self, units: int) -> bool:
        return self._can_place([units], self.free_chunks)

    def acquire(self, action: Action, units: int, now: float) -> Placement:
        if action.service_id is None:
            raise SchedulingError(f"GPU action {action.id} has no service id")
        key: CacheKey = (action.service_id, units)
        if key not in self.restore_costs:
            raise SchedulingError(f"service/DoP {key} not in catalog")
        try:
            chunk = chunk_allocate(self.free_chunks, units, key)
        except AllocationUnavailable:
            # cache-preserving coalescing may have left buddies split even
            # though the devices are free; merge them and retry once
            level = request_level(units)
            merged = any(
                force_coalesce(self.free_chunks, node, level)
                for node in range(self.spec.gpu_nodes)
            )
            if not merged:
                raise
            chunk = chunk_allocate(self.free_chunks, units, key)
        warm = chunk.cached_key == key
        overhead = 0.0 if warm else self.restore_costs[key]
        evicted = chunk.cached_key if not warm and chunk.cached_key is not None else None
        chunk.cached_key = key
        chunk.last_used = now
        self.busy[action.id] = chunk
        return Placement(
            self, action.id, units, overhead,
            detail={"node": chunk.node, "start": chunk.start, "level": chunk.level,
                    "warm": warm, "evicted": evicted},
        )

    def _release(self, placement: Placement, now: float) -> None:
        chunk = self.busy.pop(placement.action_id)
        chunk_free(chunk, self.free_chunks)

    def remaining(self) -> int:
        return sum(c.size for c in self.free_chunks)

    def dp_operator(self) -> DpOperator:
        return GpuDpOperator(self._counts(self.free_chunks))


def build_manager(spec: ResourceSpec) -> ResourceManager:
    if spec.kind == "cpu":
        return CpuManager(spec)
    if spec.kind == "gpu":
        return GpuManager(spec)
    return BasicManager(spec)
