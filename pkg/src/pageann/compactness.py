"""Per-page locality metrics over the undirected induced subgraph.

Page compactness is ``lambda2 / diameter`` where ``lambda2`` is the
second-smallest Laplacian eigenvalue. Pages hold at most a few dozen
vertices, so a dense cyclic Jacobi solver is plenty.
"""
from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import GraphIndex, Layout

INFINITE = math.inf
JACOBI_TOL = 1e-10
ZERO_TOL = 1e-9
STAR_GAMMA = 0.5  # a star of any size has lambda2 = 1 and diameter 2


@dataclass(frozen=True)
class SmallGraph:
    ids: tuple[int, ...]
    adj: np.ndarray  # (n, n) bool, symmetric, zero diagonal

    @property
    def n(self) -> int:
        return len(self.ids)

    def edges(self) -> set[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adj, 1))
        return {(self.ids[a], self.ids[b]) if self.ids[a] < self.ids[b] else (self.ids[b], self.ids[a])
                for a, b in zip(i.tolist(), j.tolist())}


def induced_subgraph(graph: GraphIndex, ids: Sequence[int]) -> SmallGraph:
    ids = tuple(dict.fromkeys(int(i) for i in ids))
    index = {v: k for k, v in enumerate(ids)}
    adj = np.zeros((len(ids), len(ids)), dtype=bool)
    for k, v in enumerate(ids):
        for u in graph.out(v).tolist():
            j = index.get(u)
            if j is not None and j != k:
                adj[k, j] = adj[j, k] = True
    return SmallGraph(ids, adj)


def graph_from_edges(n: int, edges) -> SmallGraph:
    adj = np.zeros((n, n), dtype=bool)
    for a, b in edges:
        if a != b:
            adj[a, b] = adj[b, a] = True
    return SmallGraph(tuple(range(n)), adj)


def diameter(sg: SmallGraph) -> float:
    """Longest shortest path; ``INFINITE`` if disconnected, 0 for one vertex."""
    n = sg.n
    if n == 0:
        raise ValueError("diameter of an empty graph")
    nbrs = [np.flatnonzero(sg.adj[i]).tolist() for i in range(n)]
    best = 0
    for s in range(n):
        dist = [-1] * n
        dist[s] = 0
        q = deque([s])
        while q:
            v = q.popleft()
            for u in nbrs[v]:
                if dist[u] < 0:
                    dist[u] = dist[v] + 1
                    q.append(u)
        if min(dist) < 0:
            return INFINITE
        best = max(best, max(dist))
    return float(best)


def laplacian(sg: SmallGraph) -> np.ndarray:
    a = sg.adj.astype(np.float64)
    return np.diag(a.sum(axis=1)) - a


def jacobi_eigenvalues(mat: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending."""
    a = np.array(mat, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12):
        raise ValueError("matrix is not symmetric")
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, float((a * a).sum() - (np.diag(a) ** 2).sum())))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
    return np.sort(np.diag(a))


def algebraic_connectivity(lap: np.ndarray) -> float:
    """Second-smallest Laplacian eigenvalue (0 for graphs with fewer than 2 vertices)."""
    lap = np.asarray(lap, dtype=np.float64)
    if lap.shape[0] < 2:
        if lap.shape[0] == 1 and lap[0, 0] != 0:
            raise ValueError("not a Laplacian")
        return 0.0
    if not np.allclose(lap, lap.T, rtol=0, atol=1e-12):
        raise ValueError("matrix is not symmetric")
    if not np.allclose(lap.sum(axis=1), 0.0, atol=1e-9):
        raise ValueError("rows of a Laplacian must sum to zero")
    lam = jacobi_eigenvalues(lap)[1]
    return max(0.0, float(lam))


def _metrics(sg: SmallGraph) -> tuple[float, float, float]:
    if sg.n < 2:
        return 0.0, 0.0, 0.0
    diam = diameter(sg)
    if diam == INFINITE:
        # disconnected Laplacians have a repeated zero eigenvalue
        return diam, 0.0, 0.0
    lam = algebraic_connectivity(laplacian(sg))
    return diam, lam, lam / diam


def page_compactness(graph: GraphIndex, page_ids: Sequence[int]) -> float:
    if len(page_ids) < 1:
        raise ValueError("page has no valid vertex")
    return _metrics(induced_subgraph(graph, page_ids))[2]


def compact_enough(graph: GraphIndex, page_ids: Sequence[int]) -> bool:
    """Disconnected, or connected with gamma at least that of a star."""
    diam, _, gam = _metrics(induced_subgraph(graph, page_ids))
    return diam == INFINITE or gam >= STAR_GAMMA - ZERO_TOL


@dataclass(frozen=True)
class PageStat:
    page_index: int
    valid_count: int
    diameter: float
    lambda2: float
    gamma: float

    @property
    def connected(self) -> bool:
        return self.valid_count >= 2 and self.diameter != INFINITE


@dataclass
class PageCompactnessReport:
    per_page: list[PageStat] = field(default_factory=list)
    mean_gamma: float = 0.0
    fraction_disconnected: float = 0.0

    @property
    def scored(self) -> list[PageStat]:
        """Pages with at least two valid vertices (singletons carry no locality)."""
        return [p for p in self.per_page if p.valid_count >= 2]

    @property
    def connected_pages(self) -> list[PageStat]:
        return [p for p in self.per_page if p.connected]

    @property
    def connected_mean_gamma(self) -> float:
        c = self.connected_pages
        return float(np.mean([p.gamma for p in c])) if c else 0.0

    @property
    def fraction_zero_gamma(self) -> float:
        s = self.scored
        return sum(p.gamma == 0.0 for p in s) / len(s) if s else 0.0

    @property
    def fraction_strict(self) -> float:
        """Share of connected pages with gamma strictly above 0.5."""
        c = self.connected_pages
        return sum(p.gamma > 0.5 for p in c) / len(c) if c else 0.0

    def summary(self) -> dict:
        return {
            "schema_version": 1,
            "pages": len(self.per_page),
            "scored_pages": len(self.scored),
            "mean_gamma": self.mean_gamma,
            "fraction_disconnected": self.fraction_disconnected,
            "connected_mean_gamma": self.connected_mean_gamma,
            "fraction_strict_gt_half": self.fraction_strict,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["page_index", "valid_count", "diameter", "lambda2", "gamma"])
            for p in self.per_page:
                diam = "inf" if p.diameter == INFINITE else int(p.diameter)
                w.writerow([p.page_index, p.valid_count, diam, f"{p.lambda2:.12g}", f"{p.gamma:.12g}"])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def layout_report(graph: GraphIndex, layout: Layout) -> PageCompactnessReport:
    """Compactness of every page; ``graph`` must use the layout's id space."""
    stats = []
    for i, page in enumerate(layout.pages):
        ids = page.ids
        diam, lam, gam = _metrics(induced_subgraph(graph, ids))
        stats.append(PageStat(i, len(ids), diam, lam, gam))
    scored = [p for p in stats if p.valid_count >= 2]
    mean = float(np.mean([p.gamma for p in scored])) if scored else 0.0
    frac = sum(p.diameter == INFINITE for p in scored) / len(scored) if scored else 0.0
    return PageCompactnessReport(stats, mean, frac)
