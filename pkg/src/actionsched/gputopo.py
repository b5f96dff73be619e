"""Chunk algebra for 8-GPU nodes and the chunk-count DP operator.

A chunk is a contiguous, power-of-two aligned GPU interval on a single node.
Free chunks may cache a (service, dop) instance; allocation prefers chunks
that already cache the requested key, and freeing coalesces buddies only
when no cached service would be lost.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .dp import DpOperator
from .model import (
    AllocationDomainError,
    AllocationUnavailable,
    ConsistencyError,
    StateDomainError,
    UnitSpec,
)

NODE_DEVICES = 8
LEVELS = (0, 1, 2, 3)
SIZES = (1, 2, 4, 8)

CacheKey = tuple[str, int]  # (service id, dop)


def request_level(m: int) -> int:
    """Chunk level a with 2^(a-1) < m <= 2^a."""
    if m not in SIZES:
        raise AllocationDomainError(f"GPU request must be in {SIZES}, got {m}")
    return (m - 1).bit_length()


@dataclass
class Chunk:
    node: int
    start: int
    level: int
    cached_key: Optional[CacheKey] = None
    last_used: float = -1.0

    def __post_init__(self) -> None:
        size = 1 << self.level
        if not (0 <= self.start < NODE_DEVICES) or self.start % size != 0:
            raise ConsistencyError(
                f"illegal chunk start={self.start} level={self.level}"
            )
        if self.start + size > NODE_DEVICES:
            raise ConsistencyError("chunk exceeds node boundary")

    @property
    def size(self) -> int:
        return 1 << self.level

    @property
    def end(self) -> int:
        return self.start + self.size

    def devices(self) -> range:
        return range(self.start, self.end)


@dataclass(frozen=True)
class ChunkCounts:
    """Counts of free chunks per size, with the per-size maxima."""

    counts: tuple[int, int, int, int]  # (a, b, c, d) for sizes 1, 2, 4, 8
    maxima: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        for cnt, mx in zip(self.counts, self.maxima):
            if not (0 <= cnt <= mx):
                raise StateDomainError(f"count {cnt} outside [0, {mx}]")

    def devices(self) -> int:
        return sum(c * s for c, s in zip(self.counts, SIZES))


def encode_state(counts: ChunkCounts) -> int:
    a, b, c, d = counts.counts
    n1, n2, n4, _ = counts.maxima
    return a + (n1 + 1) * (b + (n2 + 1) * (c + (n4 + 1) * d))


def decode_state(index: int, maxima: tuple[int, int, int, int]) -> ChunkCounts:
    n1, n2, n4, n8 = maxima
    total = (n1 + 1) * (n2 + 1) * (n4 + 1) * (n8 + 1)
    if not (0 <= index < total):
        raise StateDomainError(f"state index {index} outside [0, {total})")
    a = index % (n1 + 1)
    index //= n1 + 1
    b = index % (n2 + 1)
    index //= n2 + 1
    c = index % (n4 + 1)
    index //= n4 + 1
    return ChunkCounts((a, b, c, index), maxima)


def gpu_prev(counts: ChunkCounts, k: int, allow_split: bool = True) -> Optional[ChunkCounts]:
    """Chunk counts left after taking k GPUs, greedily large-to-small.

    If the greedy pass leaves a residual, one free chunk larger than the
    residual is split; the unused power-of-two pieces are credited back.
    ``allow_split=False`` reproduces the split-free greedy decomposition
    (used as an oracle for the compatibility tests).
    """
    if k not in SIZES:
        raise AllocationDomainError(f"requested GPUs must be in {SIZES}, got {k}")
    free = list(counts.counts)
    need = k
    for idx in (3, 2, 1, 0):
        size = SIZES[idx]
        use = min(free[idx], need // size)
        free[idx] -= use
        need -= use * size
    if need > 0:
        if not allow_split:
            return None
        source = next((i for i in (0, 1, 2, 3) if SIZES[i] > need and free[i] > 0), None)
        if source is None:
            return None
        free[source] -= 1
        leftover = SIZES[source] - need
        for idx in (0, 1, 2, 3):
            if leftover & SIZES[idx]:
                free[idx] += 1
    result = tuple(free)
    for cnt, mx in zip(result, counts.maxima):
        if cnt > mx:
            return None
    return ChunkCounts(result, counts.maxima)  # type: ignore[arg-type]


# --- chunk set operations on one node ------------------------------------


def split_chunk(chunk: Chunk, free_chunks: list[Chunk]) -> Chunk:
    """Halve a chunk; keep the lowest-start child, add the sibling to free."""
    if chunk.level == 0:
        raise ConsistencyError("cannot split a level-0 chunk")
    child_level = chunk.level - 1
    half = 1 << child_level
    kept = Chunk(chunk.node, chunk.start, child_level, chunk.cached_key, chunk.last_used)
    sibling = Chunk(chunk.node, chunk.start + half, child_level)
    free_chunks.append(sibling)
    return kept


def chunk_allocate(
    free_chunks: list[Chunk],
    m: int,
    service_key: Optional[CacheKey] = None,
) -> Chunk:
    """Pick and remove a chunk for an m-GPU request.

    Smallest sufficient level wins; within a level, a chunk already caching
    the requested key beats everything, then uncached chunks, then the
    least-recently-used cached one (LRU eviction of a cold cache).
    """
    level = request_level(m)
    for b in range(level, max(LEVELS) + 1):
        candidates = [c for c in free_chunks if c.level == b]
        if not candidates:
            continue
        affine = [c for c in candidates if service_key is not None and c.cached_key == service_key]
        if affine:
            chosen = min(affine, key=lambda c: (c.start, c.node))
        else:
            uncached = [c for c in candidates if c.cached_key is None]
            if uncached:
                chosen = min(uncached, key=lambda c: (c.start, c.node))
            else:
                chosen = min(candidates, key=lambda c: (c.last_used, c.start, c.node))
        free_chunks.remove(chosen)
        while chosen.level > level:
            chosen = split_chunk(chosen, free_chunks)
        return chosen
    raise AllocationUnavailable(f"no free chunk of level >= {level}")


def buddy_start(start: int, level: int) -> int:
    return start ^ (1 << level)


def chunk_free(chunk: Chunk, free_chunks: list[Chunk]) -> None:
    """Return a chunk to the free set, coalescing cache-compatible buddies.

    Buddies merge only when merging loses no cached service: at most one of
    the two may carry a cache key, and the parent inherits it.
    """
    for c in free_chunks:
        if c.node == chunk.node and c.start < chunk.end and chunk.start < c.end:
            raise ConsistencyError(
                f"double free: chunk ({chunk.start},{chunk.end}) overlaps free set"
            )
    current = chunk
    while current.level < max(LEVELS):
        bstart = buddy_start(current.start, current.level)
        buddy = next(
            (c for c in free_chunks if c.node == current.node
             and c.level == current.level and c.start == bstart),
            None,
        )
        if buddy is None:
            break
        keys = {k for k in (current.cached_key, buddy.cached_key) if k is not None}
        if len(keys) > 1:
            break
        free_chunks.remove(buddy)
        current = Chunk(
            current.node,
            min(current.start, buddy.start),
            current.level + 1,
            next(iter(keys)) if keys else None,
            max(current.last_used, buddy.last_used),
        )
    free_chunks.append(current)


def force_coalesce(free_chunks: list[Chunk], node: int, level: int) -> bool:
    """Merge free buddies on a node, dropping caches, until a chunk of the
    requested level exists.  Returns True on success.

    Used as a fallback when cache-preserving coalescing left the node too
    fragmented for a legal allocation that plainly fits by device count.
    """
    while not any(c.node == node and c.level >= level for c in free_chunks):
        merged = False
        for c in list(free_chunks):
            if c.node != node or c.level >= level:
                continue
            bstart = buddy_start(c.start, c.level)
            buddy = next(
                (x for x in free_chunks if x.node == node
                 and x.level == c.level and x.start == bstart),
                None,
            )
            if buddy is None:
                continue
            free_chunks.remove(c)
            free_chunks.remove(buddy)
            free_chunks.append(
                Chunk(node, min(c.start, buddy.start), c.level + 1,
                      None, max(c.last_used, buddy.last_used))
            )
            merged = True
            break
        if not merged:
            return False
    return True


def count_free(chunks: Iterable[Chunk], maxima: tuple[int, int, int, int]) -> ChunkCounts:
    counts = [0, 0, 0, 0]
    for c in chunks:
        counts[c.level] += 1
    return ChunkCounts(tuple(counts), maxima)  # type: ignore[arg-type]


def maxima_for_counts(counts: Sequence[int]) -> tuple[int, int, int, int]:
    """Tight per-size maxima reachable from the given free counts via splits.

    Splitting a larger chunk credits at most one chunk of each smaller size,
    so size s can never exceed its current count plus the number of larger
    free chunks.  Tight maxima keep the DP state space small.
    """
    a, b, c, d = counts
    return (a + b + c + d, b + c + d, c + d, d)


class GpuDpOperator(DpOperator):
    """DP operator over encoded chunk-count states of the current free pool."""

    def __init__(self, counts: Sequence[int]):
        self.maxima = maxima_for_counts(counts)
        self.current = ChunkCounts(tuple(counts), self.maxima)  # type: ignore[arg-type]

    def start(self, specs: Sequence[UnitSpec]) -> int:
        """Minimal chunks left after reserving each minimum from a free pool."""
        state = self.current
        for spec in sorted(specs, key=lambda s: -s.min_units):
            nxt = gpu_prev(state, spec.min_units)
            if nxt is None:
                raise AllocationUnavailable("minimum requests exceed free chunks")
            state = nxt
        return encode_state(state)

    def end(self, specs: Sequence[UnitSpec]) -> int:
        return encode_state(self.current)

    def prev(self, state: int, k: int) -> Optional[int]:
        nxt = gpu_prev(decode_state(state, self.maxima), k)
        return encode_state(nxt) if nxt is not None else None
