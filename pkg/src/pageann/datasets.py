"""fvecs/ivecs files, synthetic corpora, exact ground truth and recall."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import VectorDataset


def _read_vecs(path, dtype: str) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw:
        raise ValueError(f"{path}: empty file")
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated header in record 0")
    dim = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if dim <= 0:
        raise ValueError(f"{path}: record 0 has non-positive dim {dim}")
    width = 4 + 4 * dim
    # walk headers so a mismatched record can be named even if sizes line up
    rows = []
    off = 0
    idx = 0
    while off < len(raw):
        if off + 4 > len(raw):
            raise ValueError(f"{path}: truncated header in record {idx}")
        d = int(np.frombuffer(raw, dtype="<i4", count=1, offset=off)[0])
        if d != dim:
            raise ValueError(f"{path}: record {idx} has dim {d}, expected {dim}")
        if off + width > len(raw):
            raise ValueError(f"{path}: record {idx} truncated")
        rows.append(off)
        off += width
        idx += 1
    arr = np.frombuffer(raw, dtype=dtype).reshape(len(rows), 1 + dim)
    return arr[:, 1:].copy()


def read_fvecs(path) -> np.ndarray:
    return _read_vecs(path, "<f4").astype(np.float32)


def read_ivecs(path) -> np.ndarray:
    return _read_vecs(path, "<i4").astype(np.int32)


def _write_vecs(path, arr: np.ndarray, dtype: str) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array")
    n, dim = arr.shape
    out = np.empty((n, dim + 1), dtype=dtype)
    out.view("<i4")[:, 0] = dim
    out[:, 1:] = arr
    Path(path).write_bytes(out.tobytes())


def write_fvecs(path, arr) -> None:
    _write_vecs(path, arr, "<f4")


def write_ivecs(path, arr) -> None:
    _write_vecs(path, arr, "<i4")


def ingest_fvecs(path) -> VectorDataset:
    return VectorDataset(read_fvecs(path))


def clustered_dataset(n: int, dim: int, clusters: int, seed: int, spread: float = 1.0,
                      box: float = 10.0, n_queries: int = 0):
    """Gaussian blobs with cluster labels assigned in random order.

    Returns ``(base, queries, centers)``. Queries are drawn from the same
    mixture but are not part of the base set.
    """
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-box, box, size=(clusters, dim))

    def draw(m):
        lab = rng.integers(0, clusters, size=m)
        return (centers[lab] + rng.normal(scale=spread, size=(m, dim))).astype(np.float32)

    base = draw(n)
    queries = draw(n_queries) if n_queries else np.empty((0, dim), dtype=np.float32)
    return base, queries, centers


def ground_truth(dataset, queries, k: int) -> np.ndarray:
    """Exact top-k ids per query by L2, ties to the lower id."""
    data = np.asarray(getattr(dataset, "data", dataset), dtype=np.float64)
    qs = np.atleast_2d(np.asarray(getattr(queries, "data", queries), dtype=np.float64))
    k = min(k, len(data))
    ids = np.arange(len(data))
    out = np.empty((len(qs), k), dtype=np.int64)
    for i, q in enumerate(qs):
        diff = data - q
        d = np.einsum("ij,ij->i", diff, diff)
        out[i] = np.lexsort((ids, d))[:k]
    return out


def recall_at_k(result_ids, truth_ids, k: int) -> float:
    result_ids = list(result_ids)
    truth_ids = list(truth_ids)
    if len(result_ids) != k or len(truth_ids) != k:
        raise ValueError(f"expected {k} ids each, got {len(result_ids)} and {len(truth_ids)}")
    return len(set(result_ids) & set(truth_ids)) / k
