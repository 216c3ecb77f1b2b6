"""Shared domain types and page addressing arithmetic.

Vertex IDs and page indices are 0-based. Block ``i`` lives in page ``i // b``
at slot ``i % b``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Reserved "empty slot" value. Never 0, because 0 is a valid vertex.
PAD = 0xFFFFFFFF


class VectorDataset:
    """``count`` vectors of ``dim`` float32 components, stored row-major."""

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("dataset contains non-finite components")
        arr.setflags(write=False)
        self.data = arr

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i):
        return self.data[i]

    def __repr__(self) -> str:
        return f"VectorDataset(count={self.count}, dim={self.dim})"


class GraphIndex:
    """Bounded out-degree directed graph over dense vertex IDs.

    Stored as a fixed-width ``(N, R)`` neighbor table plus per-vertex degree,
    which is also the on-disk shape.
    """

    def __init__(self, neighbors: np.ndarray, degrees: np.ndarray, max_degree: int):
        self.neighbors = np.ascontiguousarray(neighbors, dtype=np.int32)
        self.degrees = np.ascontiguousarray(degrees, dtype=np.int32)
        self.max_degree = int(max_degree)
        if self.neighbors.shape != (len(self.degrees), self.max_degree):
            raise ValueError("neighbor table shape does not match (N, R)")

    @classmethod
    def from_lists(cls, lists: Sequence[Iterable[int]], max_degree: int | None = None) -> "GraphIndex":
        lists = [list(map(int, x)) for x in lists]
        if max_degree is None:
            max_degree = max([len(x) for x in lists] + [1])
        n = len(lists)
        nbrs = np.zeros((n, max_degree), dtype=np.int32)
        deg = np.zeros(n, dtype=np.int32)
        for v, lst in enumerate(lists):
            if len(lst) > max_degree:
                raise ValueError(f"vertex {v} has {len(lst)} neighbors > R={max_degree}")
            nbrs[v, : len(lst)] = lst
            deg[v] = len(lst)
        return cls(nbrs, deg, max_degree)

    @property
    def count(self) -> int:
        return len(self.degrees)

    def __len__(self) -> int:
        return self.count

    def out(self, v: int) -> np.ndarray:
        return self.neighbors[v, : self.degrees[v]]

    def to_lists(self) -> list[list[int]]:
        return [self.out(v).tolist() for v in range(self.count)]

    def edge_count(self) -> int:
        return int(self.degrees.sum())

    def edges(self) -> set[tuple[int, int]]:
        return {(v, int(u)) for v in range(self.count) for u in self.out(v)}

    def violations(self) -> list[str]:
        """Invariant breaches: self loops, duplicates, out-of-range IDs, oversize lists."""
        out = []
        n = self.count
        for v in range(n):
            d = int(self.degrees[v])
            if d < 0 or d > self.max_degree:
                out.append(f"vertex {v}: degree {d} outside [0, {self.max_degree}]")
                continue
            lst = self.out(v)
            if np.any(lst == v):
                out.append(f"vertex {v}: self loop")
            if len(np.unique(lst)) != d:
                out.append(f"vertex {v}: duplicate neighbors")
            if d and (lst.min() < 0 or lst.max() >= n):
                out.append(f"vertex {v}: neighbor id out of range")
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, GraphIndex):
            return NotImplemented
        return (
            self.max_degree == other.max_degree
            and np.array_equal(self.degrees, other.degrees)
            and all(np.array_equal(self.out(v), other.out(v)) for v in range(self.count))
        )


@dataclass(frozen=True)
class DataBlock:
    """One vertex's on-disk unit: its full vector and its neighbor IDs."""

    id: int
    vector: np.ndarray
    neighbors: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, DataBlock):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.vector, other.vector)
            and np.array_equal(self.neighbors, other.neighbors)
        )


@dataclass(frozen=True)
class LogicalPage:
    slots: tuple[int, ...]

    @classmethod
    def of(cls, ids: Sequence[int], b: int) -> "LogicalPage":
        ids = [int(i) for i in ids]
        if len(ids) > b:
            raise ValueError(f"{len(ids)} ids do not fit a page of {b}")
        return cls(tuple(ids) + (PAD,) * (b - len(ids)))

    @property
    def valid_count(self) -> int:
        return sum(1 for s in self.slots if s != PAD)

    @property
    def ids(self) -> list[int]:
        return [s for s in self.slots if s != PAD]


@dataclass(frozen=True)
class Layout:
    pages: tuple[LogicalPage, ...]
    page_capacity: int

    @property
    def num_pages(self) -> int:
        return len(self.pages)

    def valid_counts(self) -> list[int]:
        return [p.valid_count for p in self.pages]


@dataclass(frozen=True)
class IdMapping:
    """Composed relabeling ``forward = f_surj o f_inj`` with its inverse."""

    f_inj: np.ndarray
    f_surj: np.ndarray
    forward: np.ndarray
    inverse: np.ndarray

    @classmethod
    def identity(cls, n: int) -> "IdMapping":
        a = np.arange(n, dtype=np.int64)
        return cls(a, a.copy(), a.copy(), a.copy())

    @property
    def size(self) -> int:
        return len(self.forward)


@dataclass(frozen=True)
class SearchParams:
    k: int = 10
    search_width: int = 100
    beam: int = 4

    def __post_init__(self):
        if self.k < 1 or self.beam < 1:
            raise ValueError("k and beam must be positive")
        if self.search_width < self.k:
            raise ValueError(f"search_width {self.search_width} < k {self.k}")


@dataclass
class SearchStats:
    ssd_page_reads: int = 0
    cache_hits: int = 0
    hops: int = 0
    full_distance_evals: int = 0
    pq_distance_evals: int = 0
    cost_units: float = 0.0
    # per-iteration (pages read, worst result id or -1) for the phase split
    trace: list = field(default_factory=list)


def page_of(vid: int, b: int) -> int:
    if b < 1:
        raise ValueError("page capacity must be >= 1")
    return vid // b


def slot_of(vid: int, b: int) -> int:
    return vid % b


def round_robin_layout(n: int, b: int) -> Layout:
    pages = tuple(LogicalPage.of(range(s, min(s + b, n)), b) for s in range(0, n, b))
    return Layout(pages, b)


def validate_layout(layout: Layout, n: int) -> list[str]:
    """Return a list of human-readable violations; empty means valid and final."""
    b = layout.page_capacity
    problems: list[str] = []
    if b < 1:
        return [f"page capacity {b} < 1"]
    seen: Counter[int] = Counter()
    for pi, page in enumerate(layout.pages):
        if len(page.slots) != b:
            problems.append(f"page {pi}: {len(page.slots)} slots, expected {b}")
        vc = page.valid_count
        if vc < 1:
            problems.append(f"page {pi}: empty page")
        if any(s == PAD for s in page.slots[:vc]) or any(s != PAD for s in page.slots[vc:]):
            problems.append(f"page {pi}: valid slots not contiguous at the front")
        local = Counter(page.ids)
        for vid, c in local.items():
            if c > 1:
                problems.append(f"page {pi}: id {vid} repeated within page")
        for slot, vid in enumerate(page.slots):
            if vid == PAD:
                continue
            if not 0 <= vid < n:
                problems.append(f"page {pi}: id {vid} out of range")
            elif page_of(vid, b) != pi or slot_of(vid, b) != slot:
                problems.append(f"page {pi} slot {slot}: id {vid} violates addressing rule")
        seen.update(page.ids)
    for vid, c in sorted(seen.items()):
        if c > 1 and 0 <= vid < n:
            problems.append(f"duplicate id {vid} ({c} occurrences)")
    missing = [i for i in range(n) if i not in seen]
    if missing:
        shown = ", ".join(map(str, missing[:10]))
        problems.append(f"missing ids: {shown}" + (" ..." if len(missing) > 10 else ""))
    return problems
