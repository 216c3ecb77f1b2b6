"""Product quantization with 8-bit codes and asymmetric distance tables.

PQ distances are squared L2; :func:`exact_distance` is plain L2.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PIVOTS = 256
_MAGIC = b"PGANNPQC"
_VERSION = 1


def exact_distance(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    diff = x - y
    return float(np.sqrt(np.dot(diff, diff)))


def sq_distances(query: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Squared L2 from one query to each row of ``points`` (float64)."""
    diff = points.astype(np.float64, copy=False) - np.asarray(query, dtype=np.float64)
    return np.einsum("ij,ij->i", diff, diff)


@dataclass(frozen=True)
class PQCodebook:
    centroids: np.ndarray  # (M, 256, dim // M) float32

    @property
    def num_chunks(self) -> int:
        return self.centroids.shape[0]

    @property
    def sub_dim(self) -> int:
        return self.centroids.shape[2]

    @property
    def dim(self) -> int:
        return self.num_chunks * self.sub_dim

    def reconstruct(self, code) -> np.ndarray:
        code = np.asarray(code)
        return self.centroids[np.arange(self.num_chunks), code].reshape(-1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PQCodebook):
            return NotImplemented
        return np.array_equal(self.centroids, other.centroids)


def default_chunks(dim: int, max_code_bytes: int | None = None) -> int:
    """Largest divisor of ``dim`` not above ``dim // 4`` (and the code-size budget)."""
    cap = max(1, dim // 4)
    if max_code_bytes is not None:
        cap = max(1, min(cap, max_code_bytes))
    for m in range(cap, 0, -1):
        if dim % m == 0:
            return m
    return 1


def _split(data: np.ndarray, m: int) -> np.ndarray:
    n, dim = data.shape
    return data.reshape(n, m, dim // m)


def _assign(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # argmin returns the first minimum, so ties go to the lowest centroid index
    d = (
        np.einsum("ij,ij->i", points, points)[:, None]
        - 2.0 * points @ centers.T
        + np.einsum("ij,ij->i", centers, centers)[None, :]
    )
    np.maximum(d, 0.0, out=d)
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(len(points)), labels]


def _kmeans_chunk(points: np.ndarray, iters: int, rng: np.random.Generator):
    """Lloyd iterations with 256 centers. Returns (centers, error history)."""
    points = points.astype(np.float64)
    distinct = np.unique(points, axis=0)
    k = min(PIVOTS, len(distinct))
    # sort the sample so the codebook does not depend on np.unique's order alone
    pick = np.sort(rng.choice(len(distinct), size=k, replace=False))
    centers = distinct[pick].copy()
    history = []
    labels, dists = _assign(points, centers)
    history.append(float(dists.sum()))
    for _ in range(iters):
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, points)
        counts = np.bincount(labels, minlength=k)
        live = counts > 0
        centers[live] = sums[live] / counts[live, None]
        empty = np.flatnonzero(~live)
        if len(empty):
            # reseed each empty center at the currently worst-served point
            order = np.argsort(-dists, kind="stable")
            for c, p in zip(empty, order):
                centers[c] = points[p]
        labels, dists = _assign(points, centers)
        history.append(float(dists.sum()))
    if k < PIVOTS:
        # duplicate rows are never chosen by encode's lowest-index tie rule
        centers = np.vstack([centers, np.repeat(centers[:1], PIVOTS - k, axis=0)])
    return centers, history


def train_pq(dataset, num_chunks: int, iters: int = 15, seed: int = 0, return_history: bool = False):
    """Train one 256-center k-means per chunk.

    ``dataset`` may be a :class:`~pageann.core.VectorDataset` or a 2-D array.
    With ``return_history`` the per-chunk quantization error after each
    assignment step is returned as well.
    """
    data = np.asarray(getattr(dataset, "data", dataset), dtype=np.float32)
    dim = data.shape[1]
    if num_chunks < 1 or dim % num_chunks:
        raise ValueError(f"dim {dim} is not divisible by M={num_chunks}")
    rng = np.random.default_rng(seed)
    chunks = _split(data, num_chunks)
    cents = np.empty((num_chunks, PIVOTS, dim // num_chunks), dtype=np.float32)
    histories = []
    for m in range(num_chunks):
        c, h = _kmeans_chunk(chunks[:, m, :], iters, rng)
        cents[m] = c
        histories.append(h)
    book = PQCodebook(cents)
    if return_history:
        return book, histories
    return book


def encode(book: PQCodebook, vectors) -> np.ndarray:
    """Nearest-centroid index per chunk. 1-D input gives shape (M,), 2-D gives (n, M)."""
    v = np.asarray(vectors, dtype=np.float64)
    single = v.ndim == 1
    if single:
        v = v[None, :]
    if v.shape[1] != book.dim:
        raise ValueError(f"dimension mismatch: {v.shape[1]} vs codebook {book.dim}")
    chunks = _split(v, book.num_chunks)
    codes = np.empty((len(v), book.num_chunks), dtype=np.uint8)
    for m in range(book.num_chunks):
        cent = book.centroids[m].astype(np.float64)
        for s in range(0, len(v), 2048):
            sub = chunks[s : s + 2048, m, :]
            # direct differences rather than the Gram trick keep ties exact
            d = ((sub[:, None, :] - cent[None, :, :]) ** 2).sum(axis=2)
            codes[s : s + 2048, m] = np.argmin(d, axis=1)
    return codes[0] if single else codes


def adc_table(book: PQCodebook, query) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (book.dim,):
        raise ValueError(f"dimension mismatch: {q.shape} vs codebook {book.dim}")
    qc = q.reshape(book.num_chunks, 1, book.sub_dim)
    return ((book.centroids.astype(np.float64) - qc) ** 2).sum(axis=2)


def pq_distance(table: np.ndarray, code) -> float:
    code = np.asarray(code)
    if len(code) != table.shape[0]:
        raise ValueError("table and code disagree on the number of chunks")
    return float(table[np.arange(table.shape[0]), code].sum())


def pq_distances(table: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Vectorized :func:`pq_distance` over an ``(n, M)`` code array."""
    return table[np.arange(table.shape[0])[None, :], codes].sum(axis=1)


def save_codebook(book: PQCodebook, path) -> None:
    header = _MAGIC + struct.pack("<IIII", _VERSION, book.num_chunks, book.dim, PIVOTS)
    Path(path).write_bytes(header + book.centroids.astype("<f4").tobytes())


def load_codebook(path) -> PQCodebook:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a PQ codebook file")
    version, m, dim, pivots = struct.unpack_from("<IIII", raw, 8)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported codebook version {version}")
    cents = np.frombuffer(raw, dtype="<f4", offset=24).reshape(m, pivots, dim // m)
    return PQCodebook(cents.astype(np.float32))
