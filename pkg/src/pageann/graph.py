"""Vamana-style graph construction: greedy search, alpha pruning, two-pass build.

Distances here are exact (full precision). Hot loops are compiled with numba;
the Python wrappers take and return plain ids and arrays.
"""
from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .core import GraphIndex, VectorDataset

_MAGIC = b"PGANNGRF"
_VERSION = 1


@dataclass(frozen=True)
class BuildParams:
    R: int = 32
    L_build: int = 64
    alpha1: float = 1.0
    alpha2: float = 1.2

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be positive")
        if self.L_build < self.R:
            raise ValueError(f"L_build {self.L_build} < R {self.R}")
        if not 1.0 <= self.alpha1 <= self.alpha2:
            raise ValueError("need 1 <= alpha1 <= alpha2")


# ---------------------------------------------------------------- kernels


@numba.njit(cache=True)
def _sqdist(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        t = np.float64(a[i]) - np.float64(b[i])
        s += t * t
    return s


@numba.njit(cache=True)
def _medoid_kernel(data):
    n = data.shape[0]
    sums = np.zeros(n)
    for i in range(n):
        for j in range(i + 1, n):
            d = np.sqrt(_sqdist(data[i], data[j]))
            sums[i] += d
            sums[j] += d
    return sums


@numba.njit(cache=True)
def _greedy_kernel(data, nbrs, deg, start, query, L, stamp, tag):
    """Best-first search keeping the L closest (sq distance, id) candidates.

    Returns (candidate ids, candidate sq distances, expanded ids in order).
    ``stamp[u] == tag`` marks vertices already considered in this search.
    """
    ids = np.empty(L, dtype=np.int64)
    ds = np.empty(L)
    expanded = np.zeros(L, dtype=np.bool_)
    visited = np.empty(data.shape[0], dtype=np.int64)
    nvis = 0
    ids[0] = start
    ds[0] = _sqdist(query, data[start])
    n = 1
    stamp[start] = tag
    while True:
        i = 0
        while i < n and expanded[i]:
            i += 1
        if i == n:
            break
        expanded[i] = True
        v = ids[i]
        visited[nvis] = v
        nvis += 1
        for t in range(deg[v]):
            u = nbrs[v, t]
            if stamp[u] == tag:
                continue
            stamp[u] = tag
            d = _sqdist(query, data[u])
            if n == L and (d > ds[n - 1] or (d == ds[n - 1] and u > ids[n - 1])):
                continue
            # insertion position by (distance, id)
            pos = n if n < L else L - 1
            while pos > 0 and (ds[pos - 1] > d or (ds[pos - 1] == d and ids[pos - 1] > u)):
                if pos < L:
                    ids[pos] = ids[pos - 1]
                    ds[pos] = ds[pos - 1]
                    expanded[pos] = expanded[pos - 1]
                pos -= 1
            ids[pos] = u
            ds[pos] = d
            expanded[pos] = False
            if n < L:
                n += 1
    return ids[:n].copy(), ds[:n].copy(), visited[:nvis].copy()


@numba.njit(cache=True)
def _prune_kernel(data, v, pool, alpha, R):
    m = pool.shape[0]
    dv = np.empty(m)
    for i in range(m):
        dv[i] = np.sqrt(_sqdist(data[v], data[pool[i]]))
    # (distance, id) order: stable sort by id, then stable sort by distance
    by_id = np.argsort(pool, kind="mergesort")
    order = by_id[np.argsort(dv[by_id], kind="mergesort")]
    cand = np.empty(m, dtype=np.int64)
    cd = np.empty(m)
    c = 0
    for i in range(m):
        u = pool[order[i]]
        # duplicates are adjacent after sorting
        if u == v or (c > 0 and cand[c - 1] == u):
            continue
        cand[c] = u
        cd[c] = dv[order[i]]
        c += 1
    alive = np.ones(c, dtype=np.bool_)
    out = np.empty(min(R, c), dtype=np.int64)
    k = 0
    for i in range(c):
        if not alive[i]:
            continue
        out[k] = cand[i]
        k += 1
        if k == R:
            break
        p = data[cand[i]]
        for j in range(i + 1, c):
            if alive[j] and alpha * np.sqrt(_sqdist(p, data[cand[j]])) <= cd[j]:
                alive[j] = False
    return out[:k].copy()


@numba.njit(cache=True)
def _build_pass(data, nbrs, deg, medoid, order, L, alpha, R, stamp, tag):
    for oi in range(order.shape[0]):
        v = order[oi]
        tag += 1
        _, _, visited = _greedy_kernel(data, nbrs, deg, medoid, data[v], L, stamp, tag)
        pool = np.empty(visited.shape[0] + deg[v], dtype=np.int64)
        pool[: visited.shape[0]] = visited
        for t in range(deg[v]):
            pool[visited.shape[0] + t] = nbrs[v, t]
        new = _prune_kernel(data, v, pool, alpha, R)
        deg[v] = new.shape[0]
        for t in range(new.shape[0]):
            nbrs[v, t] = new[t]
        for t in range(new.shape[0]):
            j = new[t]
            present = False
            for s in range(deg[j]):
                if nbrs[j, s] == v:
                    present = True
                    break
            if present:
                continue
            if deg[j] < R:
                nbrs[j, deg[j]] = v
                deg[j] += 1
            else:
                pool2 = np.empty(deg[j] + 1, dtype=np.int64)
                pool2[: deg[j]] = nbrs[j, : deg[j]]
                pool2[deg[j]] = v
                kept = _prune_kernel(data, j, pool2, alpha, R)
                deg[j] = kept.shape[0]
                for s in range(kept.shape[0]):
                    nbrs[j, s] = kept[s]
    return tag


# ---------------------------------------------------------------- public API


def _as_array(dataset) -> np.ndarray:
    return np.ascontiguousarray(getattr(dataset, "data", dataset), dtype=np.float32)


def compute_medoid(dataset) -> int:
    """Vertex minimizing the sum of L2 distances to all others; ties go to the lowest id."""
    data = _as_array(dataset)
    if len(data) == 1:
        return 0
    return int(np.argmin(_medoid_kernel(data)))


def greedy_build_search(graph: GraphIndex, dataset, start: int, query, L_build: int):
    """Returns ``(candidates, visited)``.

    ``candidates`` is a list of ``(id, distance)`` for the L_build closest
    vertices found, ascending; ``visited`` is the set of expanded vertices.
    """
    data = _as_array(dataset)
    q = np.asarray(query, dtype=np.float32)
    stamp = np.zeros(graph.count, dtype=np.int64)
    ids, ds, vis = _greedy_kernel(
        data, graph.neighbors, graph.degrees, int(start), q, int(L_build), stamp, 1
    )
    cands = [(int(i), float(np.sqrt(d))) for i, d in zip(ids, ds)]
    return cands, {int(v) for v in vis}


def robust_prune(candidates, v: int, alpha: float, R: int, dataset) -> list[int]:
    """Alpha-prune ``candidates`` (ids, or ``(id, distance)`` pairs) around ``v``.

    Distances are recomputed from ``dataset`` so callers cannot pass stale ones.
    """
    ids = [c[0] if isinstance(c, (tuple, list)) else c for c in candidates]
    pool = np.asarray(ids, dtype=np.int64)
    if len(pool) == 0:
        return []
    return _prune_kernel(_as_array(dataset), int(v), pool, float(alpha), int(R)).tolist()


def _random_graph(n: int, R: int, rng: np.random.Generator):
    width = min(R, n - 1)
    nbrs = np.zeros((n, R), dtype=np.int32)
    deg = np.full(n, width, dtype=np.int32)
    for v in range(n):
        pick = rng.choice(n - 1, size=width, replace=False)
        pick[pick >= v] += 1
        nbrs[v, :width] = pick
    return nbrs, deg


def reachable_from(graph: GraphIndex, root: int) -> np.ndarray:
    seen = np.zeros(graph.count, dtype=bool)
    seen[root] = True
    q = deque([root])
    while q:
        v = q.popleft()
        for u in graph.out(v):
            if not seen[u]:
                seen[u] = True
                q.append(int(u))
    return seen


def _repair_reachability(data, nbrs, deg, medoid, R, alpha):
    for _ in range(len(deg)):
        g = GraphIndex(nbrs, deg, R)
        seen = reachable_from(g, medoid)
        lost = np.flatnonzero(~seen)
        if len(lost) == 0:
            return
        reach = np.flatnonzero(seen)
        v = int(lost[0])
        diff = data[reach].astype(np.float64) - data[v]
        u = int(reach[np.argmin(np.einsum("ij,ij->i", diff, diff))])
        if deg[u] < R:
            nbrs[u, deg[u]] = v
            deg[u] += 1
        else:
            kept = _prune_kernel(data, u, nbrs[u, : deg[u]].astype(np.int64), alpha, R - 1)
            kept = [int(x) for x in kept if x != v][: R - 1]
            row = kept + [v]
            nbrs[u, : len(row)] = row
            deg[u] = len(row)


def build_vamana(dataset, params: BuildParams = BuildParams(), seed: int = 0) -> GraphIndex:
    data = _as_array(dataset)
    n = len(data)
    if n < 2:
        raise ValueError("need at least two points to build a graph")
    R = params.R
    rng = np.random.default_rng(seed)
    nbrs, deg = _random_graph(n, R, rng)
    medoid = compute_medoid(data)
    stamp = np.zeros(n, dtype=np.int64)
    tag = 0
    for alpha in (params.alpha1, params.alpha2):
        order = rng.permutation(n).astype(np.int64)
        tag = _build_pass(data, nbrs, deg, medoid, order, params.L_build, float(alpha), R, stamp, tag)
    _repair_reachability(data, nbrs, deg, medoid, R, params.alpha2)
    return GraphIndex(nbrs, deg, R)


def reverse_edge_fraction(graph: GraphIndex) -> float:
    edges = graph.edges()
    if not edges:
        return 0.0
    return sum((u, v) in edges for v, u in edges) / len(edges)


def save_graph(graph: GraphIndex, path) -> None:
    n, R = graph.count, graph.max_degree
    rows = np.zeros((n, R + 1), dtype="<u4")
    rows[:, 0] = graph.degrees
    rows[:, 1:] = graph.neighbors
    for v in range(n):
        rows[v, 1 + graph.degrees[v] :] = 0
    Path(path).write_bytes(_MAGIC + struct.pack("<IQI", _VERSION, n, R) + rows.tobytes())


def load_graph(path) -> GraphIndex:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a graph file")
    version, n, R = struct.unpack_from("<IQI", raw, 8)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported graph version {version}")
    rows = np.frombuffer(raw, dtype="<u4", offset=24).reshape(n, R + 1)
    return GraphIndex(rows[:, 1:].astype(np.int32), rows[:, 0].astype(np.int32), R)
