"""Query execution over a disk-resident index.

Candidates are ranked by PQ distance (squared, from in-memory codes);
results are re-ranked by exact L2 computed from vectors read off the pages.
Every ordering breaks ties by the lower vertex id.

:func:`beamsearch` reads one coalesced batch of pages per hop.
:func:`pagesearch` adds a per-query :class:`PageHeap`: vertices from pages
already in memory are expanded while the next batch is in flight, and beam
vertices whose page is pooled skip the read.
"""
from __future__ import annotations

import bisect
import heapq
from collections import OrderedDict, deque
from dataclasses import dataclass

import numpy as np

from .core import DataBlock, SearchParams, SearchStats
from .entry import EntryCandidates, select_entry
from .quantization import PQCodebook, adc_table, exact_distance, pq_distances
from .storage import StorageBackend

DEFAULT_POOL_PAGES = 128
EXPAND_COST = 1.0


class CandidateSet:
    """Ascending ``(pq_distance, id)`` list capped at ``width``."""

    def __init__(self, width: int):
        self.width = width
        self.items: list[tuple[float, int]] = []
        self.members: set[int] = set()

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, vid: int) -> bool:
        return vid in self.members

    def insert(self, vid: int, dist: float) -> None:
        if vid in self.members:
            return
        item = (dist, vid)
        if len(self.items) == self.width and item >= self.items[-1]:
            return
        bisect.insort(self.items, item)
        self.members.add(vid)
        while len(self.items) > self.width:
            _, gone = self.items.pop()
            self.members.discard(gone)

    def top_unvisited(self, count: int, visited: set[int]) -> list[int]:
        out = []
        for _, vid in self.items:
            if vid not in visited:
                out.append(vid)
                if len(out) == count:
                    break
        return out

    def ids(self) -> list[int]:
        return [v for _, v in self.items]


class ResultSet:
    """Ascending ``(exact distance, id)`` list capped at ``k``."""

    def __init__(self, k: int):
        self.k = k
        self.items: list[tuple[float, int]] = []

    def __len__(self) -> int:
        return len(self.items)

    def insert(self, vid: int, dist: float) -> None:
        if any(v == vid for _, v in self.items):
            return
        bisect.insort(self.items, (dist, vid))
        del self.items[self.k :]

    def ids(self) -> list[int]:
        return [v for _, v in self.items]

    def distances(self) -> list[float]:
        return [d for d, _ in self.items]


class PageHeap:
    """Per-query page pool, circular queue of unscored vertices, and min-heap.

    ``capacity`` pages are pooled with FIFO eviction; capacity 0 disables it.
    """

    def __init__(self, b: int, capacity: int = DEFAULT_POOL_PAGES):
        self.b = b
        self.capacity = capacity
        self.pool: OrderedDict[int, list[DataBlock]] = OrderedDict()
        self.queue: deque[DataBlock] = deque()
        self.heap: list[tuple[float, int, DataBlock]] = []
        self._registered: set[int] = set()

    def cache(self, page: int, blocks: list[DataBlock], visited: set[int] = frozenset()) -> None:
        if self.capacity <= 0 or page in self.pool:
            return
        while len(self.pool) >= self.capacity:
            self.pool.popitem(last=False)
        self.pool[page] = blocks
        for blk in blocks:
            if blk.id not in visited and blk.id not in self._registered:
                self._registered.add(blk.id)
                self.queue.append(blk)

    def update(self, query, stats: SearchStats | None = None) -> None:
        while self.queue:
            blk = self.queue.popleft()
            d = exact_distance(query, blk.vector)
            if stats is not None:
                stats.full_distance_evals += 1
            heapq.heappush(self.heap, (d, blk.id, blk))

    def check2ret(self, vid: int) -> DataBlock | None:
        blocks = self.pool.get(vid // self.b)
        if blocks is None:
            return None
        return blocks[vid % self.b]

    def pop(self) -> DataBlock | None:
        if not self.heap:
            return None
        return heapq.heappop(self.heap)[2]


@dataclass
class SearchIndex:
    """Everything a query needs: the page backend plus in-memory PQ codes.

    All ids are in the index's own (final) id space. ``to_original`` maps
    them back to the corpus ids when the index was relabeled.
    """

    backend: StorageBackend
    codebook: PQCodebook
    codes: np.ndarray
    medoid: int
    entries: EntryCandidates | None = None
    to_original: np.ndarray | None = None
    expand_cost: float = EXPAND_COST

    @property
    def n(self) -> int:
        return self.backend.n

    @property
    def b(self) -> int:
        return self.backend.b

    def entry_for(self, query, strategy: str, stats: SearchStats | None = None) -> int:
        if strategy == "medoid":
            return self.medoid
        if strategy == "query-sensitive":
            if self.entries is None:
                raise ValueError("index has no entry candidates")
            return select_entry(self.entries, query, stats)
        raise ValueError(f"unknown entry strategy {strategy!r}")

    def query(self, query, params: SearchParams, algorithm: str = "pagesearch",
              entry: str = "medoid", pool_pages: int = DEFAULT_POOL_PAGES):
        """Returns ``(ids, distances, stats)``; ids are original corpus ids when known."""
        stats = SearchStats()
        start = self.entry_for(query, entry, stats)
        if algorithm == "beamsearch":
            res, stats = beamsearch(self, start, query, params, stats=stats)
        elif algorithm == "pagesearch":
            res, stats = pagesearch(self, start, query, params, pool_pages=pool_pages, stats=stats)
        else:
            raise ValueError(f"unknown algorithm {algorithm!r}")
        ids = res.ids()
        if self.to_original is not None:
            ids = [int(self.to_original[i]) for i in ids]
        return ids, res.distances(), stats


class _Query:
    def __init__(self, index: SearchIndex, query, params: SearchParams, stats: SearchStats):
        self.index = index
        self.q = np.asarray(query, dtype=np.float32)
        self.table = adc_table(index.codebook, self.q)
        self.params = params
        self.stats = stats
        self.C = CandidateSet(params.search_width)
        self.R = ResultSet(params.k)
        self.visited: set[int] = set()

    def seed(self, entry: int) -> None:
        if not 0 <= entry < self.index.n:
            raise ValueError(f"entry vertex {entry} out of range [0, {self.index.n})")
        d = float(pq_distances(self.table, self.index.codes[[entry]])[0])
        self.stats.pq_distance_evals += 1
        self.C.insert(entry, d)

    def expand(self, block: DataBlock) -> None:
        self.visited.add(block.id)
        neighbor_expansion(self, block, self.C, self.R, self.params.search_width, self.params.k)

    def trace(self, pages: int) -> None:
        R = self.R
        worst = R.items[-1][1] if len(R) == R.k else -1
        self.stats.trace.append((pages, worst))


def neighbor_expansion(state: _Query, block: DataBlock, C: CandidateSet, R: ResultSet, L_s: int, k: int) -> None:
    """Merge ``block``'s neighbors into C by PQ distance and ``block`` itself into R by exact distance."""
    fresh = [int(u) for u in block.neighbors if int(u) not in C]
    if fresh:
        d = pq_distances(state.table, state.index.codes[fresh])
        state.stats.pq_distance_evals += len(fresh)
        for u, du in zip(fresh, d.tolist()):
            C.insert(u, du)
    R.insert(block.id, exact_distance(state.q, block.vector))
    state.stats.full_distance_evals += 1


def beamsearch(index: SearchIndex, entry: int, query, params: SearchParams,
               stats: SearchStats | None = None):
    st = _Query(index, query, params, stats or SearchStats())
    st.seed(entry)
    b = index.b
    while True:
        frontier = st.C.top_unvisited(params.beam, st.visited)
        if not frontier:
            break
        st.stats.hops += 1
        st.trace(len({v // b for v in frontier}))
        handle = index.backend.submit((v // b for v in frontier), st.stats)
        pages = handle.wait()
        st.stats.cost_units += handle.latency
        for v in frontier:
            st.expand(pages[v // b][v % b])
            st.stats.cost_units += index.expand_cost
    return st.R, st.stats


def pagesearch(index: SearchIndex, entry: int, query, params: SearchParams,
               pool_pages: int = DEFAULT_POOL_PAGES, expansion_cap: int | None = None,
               stats: SearchStats | None = None):
    st = _Query(index, query, params, stats or SearchStats())
    st.seed(entry)
    b = index.b
    heap = PageHeap(b, pool_pages)
    cap = b * params.beam if expansion_cap is None else expansion_cap
    while True:
        frontier = st.C.top_unvisited(params.beam, st.visited)
        if not frontier:
            break
        st.stats.hops += 1
        want = []
        held: dict[int, DataBlock] = {}
        for v in frontier:
            blk = heap.check2ret(v)
            if blk is None:
                want.append(v // b)
            else:
                held[v] = blk
                st.stats.cache_hits += 1
        handle = index.backend.submit(want, st.stats)
        st.trace(len(handle.pages))
        heap.update(st.q, st.stats)
        overlapped = 0.0
        pops = 0
        while pops < cap:
            blk = heap.pop()
            if blk is None:
                break
            pops += 1
            if blk.id in st.visited:
                continue
            st.expand(blk)
            handle.advance(index.expand_cost)
            overlapped += index.expand_cost
            if handle.done():
                break
        got = handle.wait()
        st.stats.cost_units += max(handle.latency, overlapped)
        for p in handle.pages:
            heap.cache(p, got[p], st.visited)
        for v in frontier:
            if v in st.visited:
                continue
            blk = held.get(v) or heap.check2ret(v)
            if blk is None:
                # pool disabled, or the page was evicted by this batch
                blk = got[v // b][v % b]
            st.expand(blk)
            st.stats.cost_units += index.expand_cost
    return st.R, st.stats
