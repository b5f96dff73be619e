"""Core domain types: actions, costs, elasticity profiles, and cluster shape.

Everything here is an immutable value object.  Durations are plain float
seconds at this layer; the simulator quantizes them to integer microseconds
before doing any event arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

SECOND_US = 1_000_000


def to_usec(seconds: float) -> int:
    """Quantize a duration/timestamp in seconds to integer microseconds."""
    return round(seconds * SECOND_US)


def from_usec(us: int) -> float:
    return us / SECOND_US


class SchedulingError(Exception):
    """Base class for all scheduling-domain errors."""


class AllocationDomainError(SchedulingError):
    """A unit count outside the allowed set was requested."""


class ModelIncompleteError(SchedulingError):
    """An operation needed a duration/elasticity that is unknown."""


class InfeasibleError(SchedulingError):
    """Capacity cannot host the tasks even at minimum units."""


class StateDomainError(SchedulingError):
    """A chunk-count state is outside its maxima or index range."""


class ConsistencyError(SchedulingError):
    """Internal bookkeeping violation (double free/release etc.)."""


class AllocationUnavailable(SchedulingError):
    """No resources right now; the caller should queue and retry later."""


GPU_UNITS = (1, 2, 4, 8)


@dataclass(frozen=True)
class UnitSpec:
    """Discrete allowed unit counts for one resource dimension of an action."""

    units: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.units:
            raise AllocationDomainError("unit spec must not be empty")
        if any(u <= 0 for u in self.units):
            raise AllocationDomainError("units must be positive")
        if any(a >= b for a, b in zip(self.units, self.units[1:])):
            raise AllocationDomainError("units must be strictly ascending")

    @property
    def min_units(self) -> int:
        return self.units[0]

    @property
    def max_units(self) -> int:
        return self.units[-1]

    def __contains__(self, m: int) -> bool:
        return m in self.units


@dataclass(frozen=True)
class CostVector:
    """Per-resource-type consumption; absent type means zero consumption."""

    entries: tuple[tuple[int, UnitSpec], ...]

    @staticmethod
    def of(mapping: Mapping[int, UnitSpec]) -> "CostVector":
        return CostVector(tuple(sorted(mapping.items())))

    def __post_init__(self) -> None:
        types = [t for t, _ in self.entries]
        if len(types) != len(set(types)):
            raise AllocationDomainError("duplicate resource type in cost vector")

    def get(self, rtype: int) -> Optional[UnitSpec]:
        for t, spec in self.entries:
            if t == rtype:
                return spec
        return None

    def types(self) -> tuple[int, ...]:
        return tuple(t for t, _ in self.entries)

    def min_units(self, rtype: int) -> int:
        spec = self.get(rtype)
        return spec.min_units if spec is not None else 0


@dataclass(frozen=True)
class ElasticityProfile:
    """Efficiency table E(m) for the key elasticity resource of an action.

    ``known=False`` models actions whose elasticity cannot be profiled; the
    scheduler then always allocates minimum units.  The profile is validated
    so that E(m)*m is non-decreasing: granting more units never slows an
    action down, which is what makes full-capacity DP readouts sound.
    """

    key_resource: int
    table: tuple[tuple[int, float], ...] = ()
    known: bool = True

    @staticmethod
    def unknown(key_resource: int) -> "ElasticityProfile":
        return ElasticityProfile(key_resource=key_resource, table=(), known=False)

    @staticmethod
    def of(key_resource: int, table: Mapping[int, float]) -> "ElasticityProfile":
        return ElasticityProfile(key_resource, tuple(sorted(table.items())), True)

    def __post_init__(self) -> None:
        if not self.known:
            return
        prev_work = 0.0
        for m, e in self.table:
            if not (0.0 < e <= 1.0):
                raise AllocationDomainError(f"E({m})={e} outside (0, 1]")
            if m == 1 and abs(e - 1.0) > 1e-12:
                raise AllocationDomainError("E(1) must be 1")
            work = e * m
            if work < prev_work - 1e-9:
                raise AllocationDomainError(
                    f"E(m)*m must be non-decreasing (violated at m={m})"
                )
            prev_work = work

    def efficiency(self, m: int) -> float:
        for mm, e in self.table:
            if mm == m:
                return e
        raise AllocationDomainError(f"m={m} not in elasticity table")

    def domain(self) -> tuple[int, ...]:
        return tuple(m for m, _ in self.table)


def eval_duration(profile: ElasticityProfile, base_duration: float, m: int) -> float:
    """Execution duration at m units: base / (E(m) * m)."""
    if base_duration is None or base_duration <= 0:
        raise ModelIncompleteError("base duration unknown or non-positive")
    if m == 1:
        return base_duration
    e = profile.efficiency(m)
    return base_duration / (e * m)


@dataclass(frozen=True)
class Action:
    """One atomic external invocation, the unit of scheduling."""

    id: int
    trajectory_id: int
    submit_time: float
    cost: CostVector
    elasticity: ElasticityProfile
    base_duration: Optional[float] = None
    service_id: Optional[str] = None
    node_pin: Optional[int] = None
    memory: float = 0.0  # trajectory memory reservation, carried on CPU actions

    @property
    def scalable(self) -> bool:
        return self.elasticity.known and self.base_duration is not None

    def fcfs_key(self) -> tuple[float, int]:
        return (self.submit_time, self.id)

    def key_spec(self) -> Optional[UnitSpec]:
        return self.cost.get(self.elasticity.key_resource)


# --- cluster description -------------------------------------------------


@dataclass(frozen=True)
class CpuNodeSpec:
    cores: int
    numa_domains: int = 1
    memory: float = 0.0

    def domain_cores(self) -> list[list[int]]:
        per = self.cores // self.numa_domains
        return [
            list(range(d * per, (d + 1) * per if d < self.numa_domains - 1 else self.cores))
            for d in range(self.numa_domains)
        ]


@dataclass(frozen=True)
class ServiceSpec:
    service_id: str
    dops: tuple[int, ...]
    restore_cost: Optional[float] = None  # seconds; None = manager default
    state_size: float = 0.0


@dataclass(frozen=True)
class ResourceSpec:
    """One managed resource type.

    kind is one of "flat", "cpu", "gpu", "quota", "concurrency".
    """

    type_id: int
    name: str
    kind: str
    capacity: int = 0  # flat / quota / concurrency limit
    window: float = 0.0  # quota window seconds
    cpu_nodes: tuple[CpuNodeSpec, ...] = ()
    gpu_nodes: int = 0
    services: tuple[ServiceSpec, ...] = ()
    default_restore: float = 0.0
    exec_overhead: float = 0.0  # fixed per-action overhead (fork/exec model)

    def total_units(self) -> int:
        if self.kind == "cpu":
            return sum(n.cores for n in self.cpu_nodes)
        if self.kind == "gpu":
            return 8 * self.gpu_nodes
        return self.capacity


@dataclass(frozen=True)
class ClusterSpec:
    resources: tuple[ResourceSpec, ...]

    def __post_init__(self) -> None:
        for i, r in enumerate(self.resources):
            if r.type_id != i:
                raise AllocationDomainError("resource type ids must be 0..k-1 in order")
            if r.total_units() <= 0:
                raise AllocationDomainError(f"resource {r.name} has no capacity")

    def by_name(self, name: str) -> ResourceSpec:
        for r in self.resources:
            if r.name == name:
                return r
        raise KeyError(name)

    def names(self) -> list[str]:
        return [r.name for r in self.resources]


# --- validation and feasibility -----------------------------------------


def validate_action(action: Action, spec: ClusterSpec) -> list[str]:
    """Report every violated invariant; an empty report means valid."""
    report: list[str] = []
    k = len(spec.resources)
    for rtype, uspec in action.cost.entries:
        if not (0 <= rtype < k):
            report.append(f"unknown resource type {rtype}")
            continue
        res = spec.resources[rtype]
        if uspec.min_units > res.total_units():
            report.append(
                f"min units {uspec.min_units} exceed capacity of {res.name}"
            )
        if res.kind == "gpu" and any(u not in GPU_UNITS for u in uspec.units):
            report.append(f"GPU units must be in {{1,2,4,8}}, got {uspec.units}")
    key = action.elasticity.key_resource
    if not (0 <= key < k):
        report.append(f"unknown key elasticity resource {key}")
    if action.elasticity.known:
        if action.cost.get(key) is None:
            report.append("key elasticity resource not present in cost vector")
        else:
            allowed = set(action.cost.get(key).units)
            for m in action.elasticity.domain():
                if m not in allowed:
                    report.append(f"elasticity table covers disallowed unit {m}")
    if action.base_duration is not None and action.base_duration <= 0:
        report.append("base duration must be positive when known")
    return report


def cost_feasible(mins: Sequence[CostVector], remaining: Mapping[int, int]) -> bool:
    """Numeric part of accommodate: per-type sum of minimums fits remaining."""
    needed: dict[int, int] = {}
    for cv in mins:
        for rtype, uspec in cv.entries:
            needed[rtype] = needed.get(rtype, 0) + uspec.min_units
    for rtype, total in needed.items():
        if total > remaining.get(rtype, 0):
            return False
    return True
