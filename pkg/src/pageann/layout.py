"""Pack-merge relabeling of a graph index so each SSD page holds a vertex star.

``pack`` groups every not-yet-placed vertex with its nearest unplaced
neighbors into a temporary page; ``merge`` combines the under-full pages by
first-fit decreasing so the final IDs stay dense and the plain
``id // b`` addressing still works. The composed relabeling is a graph
isomorphism, applied by :func:`remap_blocks`.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compactness import compact_enough
from .core import DataBlock, GraphIndex, IdMapping, Layout, LogicalPage, round_robin_layout
from .quantization import PQCodebook, adc_table, encode, pq_distances, sq_distances

_MAGIC = b"PGANNMAP"
_VERSION = 1


def _temp_layout(groups: list[list[int]], b: int):
    """Page-contiguous temp ids for a list of vertex groups.

    Returns (layout in temp ids, f_inj) where f_inj maps member -> temp id.
    """
    n = sum(len(g) for g in groups)
    f_inj = np.full(n, -1, dtype=np.int64)
    pages = []
    for p, grp in enumerate(groups):
        base = p * b
        for s, v in enumerate(grp):
            f_inj[v] = base + s
        pages.append(LogicalPage.of(range(base, base + len(grp)), b))
    return Layout(tuple(pages), b), f_inj


def pack(graph: GraphIndex, dataset, codebook: PQCodebook | None, b: int,
         codes: np.ndarray | None = None, exact: bool = False):
    """Star packing. Returns ``(temp_layout, f_inj)``.

    Neighbors are ranked by asymmetric PQ distance from the center's full
    vector (or exact distance with ``exact=True``), ties to the lower id.
    """
    if b < 1:
        raise ValueError("page capacity must be >= 1")
    data = np.asarray(getattr(dataset, "data", dataset), dtype=np.float32)
    n = graph.count
    if not exact:
        if codebook is None:
            raise ValueError("PQ ordering needs a codebook")
        if codes is None:
            codes = encode(codebook, data)
    visited = np.zeros(n, dtype=bool)
    groups: list[list[int]] = []
    for v in range(n):
        if visited[v]:
            continue
        visited[v] = True
        grp = [v]
        nb = graph.out(v)
        if len(nb) and b > 1:
            if exact:
                d = sq_distances(data[v], data[nb])
            else:
                d = pq_distances(adc_table(codebook, data[v]), codes[nb])
            for u in nb[np.lexsort((nb, d))]:
                if len(grp) == b:
                    break
                if not visited[u]:
                    visited[u] = True
                    grp.append(int(u))
        groups.append(grp)
    return _temp_layout(groups, b)


def ffd_bins(sizes, b: int) -> list[list[int]]:
    """First-fit decreasing over item sizes. Returns bins as lists of item indices.

    Items are taken by size descending (stable on index) and placed in the
    first open bin with room, opening a new bin otherwise.
    """
    order = sorted(range(len(sizes)), key=lambda i: (-sizes[i], i))
    bins: list[list[int]] = []
    room: list[int] = []
    for i in order:
        s = sizes[i]
        if s > b:
            raise ValueError(f"item of size {s} exceeds capacity {b}")
        for k, r in enumerate(room):
            if s <= r:
                bins[k].append(i)
                room[k] -= s
                break
        else:
            bins.append([i])
            room.append(b - s)
    return bins


def _swap_equal_fragments(bins: list[list[int]], sizes, b: int, ok, max_tries: int = 256) -> list[list[int]]:
    """Permute equal-size fragments between full bins to clear pages rejected by ``ok``.

    FFD only inspects sizes, so any such permutation is itself an FFD output.
    A swap is kept when both bins it touches end up acceptable.
    """
    full = [k for k, bn in enumerate(bins) if len(bn) >= 2 and sum(sizes[i] for i in bn) == b]
    where = {i: k for k in full for i in bins[k]}
    for k in full:
        if ok(bins[k]):
            continue
        tries = 0
        for pos in sorted(range(len(bins[k])), key=lambda p: sizes[bins[k][p]]):
            i = bins[k][pos]
            for j in [j for j, kk in where.items() if kk != k and sizes[j] == sizes[i]]:
                tries += 1
                k2 = where[j]
                mine = bins[k][:pos] + [j] + bins[k][pos + 1:]
                theirs = [i if x == j else x for x in bins[k2]]
                if ok(mine) and ok(theirs):
                    bins[k], bins[k2] = mine, theirs
                    where[i], where[j] = k2, k
                    break
                if tries >= max_tries:
                    break
            else:
                continue
            break
    return bins


def merge(temp: Layout, b: int, page_ok=None):
    """FFD merge of temp pages into a dense final layout. Returns ``(final_layout, f_surj)``.

    Fully packed bins keep their fragments intact. Whatever FFD leaves
    under-full is streamed into consecutive pages, so every final page except
    possibly the last is full. ``f_surj`` is indexed by temp id (PAD slots ``-1``).
    ``page_ok(temp_ids)``, when given, steers ties between equal-size fragments.
    """
    sizes = temp.valid_counts()
    bins = ffd_bins(sizes, b)
    members = lambda bn: [tid for i in bn for tid in temp.pages[i].ids]
    if page_ok is not None:
        bins = _swap_equal_fragments(bins, sizes, b, lambda bn: page_ok(members(bn)))
    full, partial = [], []
    for bn in bins:
        m = members(bn)
        (full if len(m) == b else partial).append(m)
    ordered = [tid for m in full for tid in m]
    ordered += [tid for m in partial for tid in m]
    space = temp.num_pages * b
    f_surj = np.full(space, -1, dtype=np.int64)
    f_surj[np.asarray(ordered, dtype=np.int64)] = np.arange(len(ordered))
    return round_robin_layout(len(ordered), b), f_surj


def compose_mapping(f_inj: np.ndarray, f_surj: np.ndarray) -> IdMapping:
    f_inj = np.asarray(f_inj, dtype=np.int64)
    f_surj = np.asarray(f_surj, dtype=np.int64)
    n = len(f_inj)
    if f_inj.min(initial=0) < 0 or f_inj.max(initial=0) >= len(f_surj):
        raise ValueError("f_inj points outside the temp id space")
    forward = f_surj[f_inj]
    if forward.min(initial=0) < 0 or forward.max(initial=0) >= n:
        raise ValueError("composition leaves the dense range 0..N-1")
    inverse = np.full(n, -1, dtype=np.int64)
    inverse[forward] = np.arange(n)
    if np.any(inverse < 0):
        raise ValueError("composed mapping is not a bijection")
    return IdMapping(f_inj, f_surj, forward, inverse)


def remap_graph(graph: GraphIndex, mapping: IdMapping) -> GraphIndex:
    inv, fwd = mapping.inverse, mapping.forward
    deg = graph.degrees[inv]
    nbrs = np.zeros_like(graph.neighbors)
    for j in range(graph.count):
        old = graph.out(inv[j])
        nbrs[j, : len(old)] = fwd[old]
    return GraphIndex(nbrs, deg, graph.max_degree)


def remap_blocks(graph: GraphIndex, dataset, mapping: IdMapping, final: Layout | None = None) -> list[DataBlock]:
    """Data blocks in final-id order: payload of ``inverse[j]``, neighbors relabeled."""
    data = np.asarray(getattr(dataset, "data", dataset), dtype=np.float32)
    if final is not None:
        total = sum(final.valid_counts())
        if total != mapping.size:
            raise ValueError(f"layout holds {total} blocks, mapping has {mapping.size}")
    fwd = mapping.forward
    blocks = []
    for j, old in enumerate(mapping.inverse):
        blocks.append(DataBlock(j, data[old], fwd[graph.out(old)].astype(np.int64)))
    return blocks


@dataclass(frozen=True)
class MappedLayout:
    temp: Layout
    final: Layout
    mapping: IdMapping


def map_layout(graph: GraphIndex, dataset, codebook: PQCodebook | None, b: int,
               codes: np.ndarray | None = None, exact: bool = False,
               compact_ties: bool = True) -> MappedLayout:
    temp, f_inj = pack(graph, dataset, codebook, b, codes=codes, exact=exact)
    page_ok = None
    if compact_ties:
        by_temp = np.full(temp.num_pages * b, -1, dtype=np.int64)
        by_temp[f_inj] = np.arange(graph.count)
        # merged pages that happen to be connected should still be star-compact
        page_ok = lambda tids: compact_enough(graph, by_temp[np.asarray(tids)])
    final, f_surj = merge(temp, b, page_ok)
    return MappedLayout(temp, final, compose_mapping(f_inj, f_surj))


def random_order_mapping(n: int, seed: int) -> IdMapping:
    perm = np.random.default_rng(seed).permutation(n).astype(np.int64)
    inverse = np.empty(n, dtype=np.int64)
    inverse[perm] = np.arange(n)
    return IdMapping(perm, np.arange(n, dtype=np.int64), perm, inverse)


def save_mapping(mapping: IdMapping, path) -> None:
    body = mapping.forward.astype("<u4").tobytes()
    Path(path).write_bytes(_MAGIC + struct.pack("<IQ", _VERSION, mapping.size) + body)


def load_mapping(path) -> IdMapping:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a mapping file")
    version, n = struct.unpack_from("<IQ", raw, 8)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported mapping version {version}")
    forward = np.frombuffer(raw, dtype="<u4", offset=20, count=n).astype(np.int64)
    inverse = np.empty(n, dtype=np.int64)
    inverse[forward] = np.arange(n)
    return IdMapping(forward, np.arange(n, dtype=np.int64), forward, inverse)
