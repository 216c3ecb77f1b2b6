"""Query-sensitive entry vertices.

Offline: cluster the corpus with mini-batch k-means and locate the graph
vertex closest to each centroid. Online: start each query from whichever
candidate is nearest to it.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import GraphIndex, SearchStats
from .graph import compute_medoid, greedy_build_search
from .quantization import sq_distances

_MAGIC = b"PGANNENT"
_VERSION = 1


def _kmeanspp(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(data)
    chosen = [int(rng.integers(n))]
    d2 = sq_distances(data[chosen[0]], data)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = int(rng.choice(n, p=d2 / total))
        else:
            # only copies of chosen points remain
            rest = np.setdiff1d(np.arange(n), chosen)
            pick = int(rng.choice(rest))
        chosen.append(pick)
        d2 = np.minimum(d2, sq_distances(data[pick], data))
    return data[chosen].copy()


def minibatch_kmeans(dataset, n_cluster: int, batch_size: int = 1024, iters: int = 100,
                     seed: int = 0) -> np.ndarray:
    """Mini-batch k-means (k-means++ seeding) with per-center learning rate ``1 / assignments so far``."""
    data = np.asarray(getattr(dataset, "data", dataset), dtype=np.float64)
    n = len(data)
    if n_cluster < 1 or n_cluster > n:
        raise ValueError(f"n_cluster={n_cluster} must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(data, n_cluster, rng)
    counts = np.zeros(n_cluster, dtype=np.int64)
    bs = min(batch_size, n)
    for _ in range(iters):
        batch = data[rng.choice(n, size=bs, replace=False)]
        d = ((batch[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d, axis=1)
        # sequential steps with eta = 1/count collapse to a running mean per center
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, batch)
        hit = np.bincount(labels, minlength=n_cluster)
        live = hit > 0
        total = counts[live] + hit[live]
        centers[live] = (centers[live] * counts[live, None] + sums[live]) / total[:, None]
        counts[live] = total
    return centers


@dataclass(frozen=True)
class EntryCandidates:
    ids: np.ndarray  # (m,) int64
    vectors: np.ndarray  # (m, dim) float32
    medoid: int
    n_cluster: int

    def __len__(self) -> int:
        return len(self.ids)

    def translated(self, forward: np.ndarray) -> "EntryCandidates":
        """Same candidates expressed in a relabeled id space."""
        return EntryCandidates(forward[self.ids], self.vectors, int(forward[self.medoid]), self.n_cluster)


def gen_entry_candidates(graph: GraphIndex, dataset, centroids, L_build: int = 64,
                         medoid: int | None = None) -> EntryCandidates:
    data = np.asarray(getattr(dataset, "data", dataset), dtype=np.float32)
    if medoid is None:
        medoid = compute_medoid(data)
    centroids = np.atleast_2d(np.asarray(centroids, dtype=np.float32))
    ids: list[int] = []
    if len(centroids) > 1:
        for c in centroids:
            cands, _ = greedy_build_search(graph, data, medoid, c, L_build)
            top = cands[0][0]
            if top not in ids:
                ids.append(top)
    # a single cluster is the whole corpus, whose representative is the medoid
    if medoid not in ids:
        ids.append(medoid)
    arr = np.asarray(ids, dtype=np.int64)
    return EntryCandidates(arr, data[arr].copy(), int(medoid), len(centroids))


def build_entry_candidates(graph: GraphIndex, dataset, n_cluster: int, seed: int = 0,
                           batch_size: int = 1024, iters: int = 100, L_build: int = 64,
                           medoid: int | None = None) -> EntryCandidates:
    cents = minibatch_kmeans(dataset, n_cluster, batch_size=batch_size, iters=iters, seed=seed)
    return gen_entry_candidates(graph, dataset, cents, L_build=L_build, medoid=medoid)


def select_entry(candidates: EntryCandidates, query, stats: SearchStats | None = None) -> int:
    """Nearest candidate by exact distance; ties to the lowest vertex id."""
    if len(candidates) == 0:
        raise ValueError("no entry candidates")
    d = sq_distances(query, candidates.vectors)
    if stats is not None:
        stats.full_distance_evals += len(candidates)
    best = np.lexsort((candidates.ids, d))[0]
    return int(candidates.ids[best])


def save_candidates(cands: EntryCandidates, path) -> None:
    m, dim = cands.vectors.shape
    rec = np.zeros(m, dtype=[("id", "<u4"), ("vec", "<f4", (dim,))])
    rec["id"] = cands.ids
    rec["vec"] = cands.vectors
    head = _MAGIC + struct.pack("<IIIII", _VERSION, m, dim, cands.medoid, cands.n_cluster)
    Path(path).write_bytes(head + rec.tobytes())


def load_candidates(path) -> EntryCandidates:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not an entry-candidates file")
    version, m, dim, medoid, n_cluster = struct.unpack_from("<IIIII", raw, 8)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported candidates version {version}")
    rec = np.frombuffer(raw, dtype=[("id", "<u4"), ("vec", "<f4", (dim,))], offset=28, count=m)
    return EntryCandidates(rec["id"].astype(np.int64), rec["vec"].astype(np.float32), medoid, n_cluster)
