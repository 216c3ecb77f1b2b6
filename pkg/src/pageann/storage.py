"""Page-aligned index files and the storage backends that read them.

Layout (little-endian)::

    page 0         header: magic, version, N, dim, R, b, page_size, num_pages
    page 1 + p     b blocks of [dim x f32 vector | u32 valid count | R x u32 neighbors]

Block for vertex ``i`` sits in data page ``i // b`` at slot ``i % b``. Unused
slots and the tail of each page are zero bytes.

Both backends hand out read handles: ``submit`` starts a coalesced batch,
``done`` is non-blocking, ``wait`` returns the decoded pages. The simulator
keeps a virtual clock per handle that the caller advances as it computes.
"""
from __future__ import annotations

import os
import struct
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DataBlock, GraphIndex, SearchStats

MAGIC = b"PGANNIDX"
VERSION = 1
DEFAULT_PAGE_SIZE = 4096
_HEADER = struct.Struct("<8sIQIIIIQ")


def block_width(dim: int, R: int) -> int:
    return dim * 4 + 4 + R * 4


def blocks_per_page(dim: int, R: int, page_size: int = DEFAULT_PAGE_SIZE) -> int:
    return page_size // block_width(dim, R)


def _block_dtype(dim: int, R: int) -> np.dtype:
    return np.dtype([("vec", "<f4", (dim,)), ("cnt", "<u4"), ("nbr", "<u4", (R,))])


@dataclass(frozen=True)
class IndexHeader:
    n: int
    dim: int
    R: int
    b: int
    page_size: int
    num_pages: int

    def pack(self) -> bytes:
        raw = _HEADER.pack(MAGIC, VERSION, self.n, self.dim, self.R, self.b, self.page_size, self.num_pages)
        return raw + bytes(self.page_size - len(raw))

    @classmethod
    def unpack(cls, raw: bytes) -> "IndexHeader":
        if len(raw) < _HEADER.size:
            raise ValueError("index header truncated")
        magic, version, n, dim, R, b, page_size, num_pages = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise ValueError("bad magic: not an index file")
        if version != VERSION:
            raise ValueError(f"unsupported index version {version}")
        if b < 1 or page_size < _HEADER.size or b * block_width(dim, R) > page_size:
            raise ValueError("corrupt index header")
        if num_pages != -(-n // b):
            raise ValueError("corrupt index header: page count does not match N and b")
        return cls(n, dim, R, b, page_size, num_pages)


def encode_index(vectors: np.ndarray, graph: GraphIndex, page_size: int = DEFAULT_PAGE_SIZE) -> bytes:
    """Serialize vectors + adjacency (already in final-id order) to index bytes."""
    vectors = np.asarray(vectors, dtype=np.float32)
    n, dim = vectors.shape
    R = graph.max_degree
    if graph.count != n:
        raise ValueError("graph and vectors disagree on N")
    b = blocks_per_page(dim, R, page_size)
    if b == 0:
        raise ValueError(f"a block of {block_width(dim, R)} bytes does not fit a {page_size}-byte page")
    num_pages = -(-n // b)
    header = IndexHeader(n, dim, R, b, page_size, num_pages)
    slots = np.zeros(num_pages * b, dtype=_block_dtype(dim, R))
    slots["vec"][:n] = vectors
    slots["cnt"][:n] = graph.degrees
    nbr = graph.neighbors.astype("<u4")
    # zero the padding beyond each valid count
    nbr[np.arange(R)[None, :] >= graph.degrees[:, None]] = 0
    slots["nbr"][:n] = nbr
    body = slots.reshape(num_pages, b)
    tail = page_size - b * body.dtype.itemsize
    out = bytearray(header.pack())
    pad = bytes(tail)
    for p in range(num_pages):
        out += body[p].tobytes()
        out += pad
    return bytes(out)


def blocks_to_arrays(blocks: Sequence[DataBlock], R: int):
    n = len(blocks)
    if [blk.id for blk in blocks] != list(range(n)):
        raise ValueError("blocks must be contiguous final ids 0..N-1")
    vectors = np.stack([np.asarray(blk.vector, dtype=np.float32) for blk in blocks])
    nbrs = np.zeros((n, R), dtype=np.int32)
    deg = np.zeros(n, dtype=np.int32)
    for blk in blocks:
        d = len(blk.neighbors)
        if d > R:
            raise ValueError(f"block {blk.id} has {d} neighbors > R={R}")
        nbrs[blk.id, :d] = blk.neighbors
        deg[blk.id] = d
    return vectors, GraphIndex(nbrs, deg, R)


def write_index(blocks: Sequence[DataBlock], path, R: int, page_size: int = DEFAULT_PAGE_SIZE) -> IndexHeader:
    vectors, graph = blocks_to_arrays(blocks, R)
    raw = encode_index(vectors, graph, page_size)
    Path(path).write_bytes(raw)
    return IndexHeader.unpack(raw)


def decode_page(raw: bytes, page: int, header: IndexHeader) -> list[DataBlock]:
    dt = _block_dtype(header.dim, header.R)
    rec = np.frombuffer(raw, dtype=dt, count=header.b)
    first = page * header.b
    valid = min(header.b, header.n - first)
    out = []
    for s in range(valid):
        r = rec[s]
        cnt = int(r["cnt"])
        if cnt > header.R:
            raise ValueError(f"page {page} slot {s}: corrupt neighbor count {cnt}")
        out.append(DataBlock(first + s, r["vec"].astype(np.float32), r["nbr"][:cnt].astype(np.int64)))
    return out


def decode_index(raw: bytes) -> tuple[IndexHeader, np.ndarray, GraphIndex]:
    """Whole-image decode: header, (N, dim) vectors and the adjacency in final ids."""
    h = IndexHeader.unpack(raw[: _HEADER.size])
    if len(raw) < (1 + h.num_pages) * h.page_size:
        raise ValueError("truncated index image")
    dt = _block_dtype(h.dim, h.R)
    body = np.frombuffer(raw, dtype=np.uint8, count=h.num_pages * h.page_size, offset=h.page_size)
    body = body.reshape(h.num_pages, h.page_size)[:, : h.b * dt.itemsize]
    rec = np.ascontiguousarray(body).view(dt).reshape(-1)[: h.n]
    deg = rec["cnt"].astype(np.int32)
    if (deg > h.R).any():
        raise ValueError("corrupt neighbor count in index")
    return h, rec["vec"].astype(np.float32), GraphIndex(rec["nbr"].astype(np.int32), deg, h.R)


def coalesce(pages: Iterable[int]) -> list[int]:
    return list(dict.fromkeys(int(p) for p in pages))


class ReadHandle:
    """One in-flight batch. Single owner."""

    pages: tuple[int, ...]
    latency: float = 0.0

    def done(self) -> bool:  # pragma: no cover - interface
        raise NotImplementedError

    def advance(self, units: float) -> None:
        """Report caller compute; only the simulator's clock uses it."""

    def wait(self) -> dict[int, list[DataBlock]]:  # pragma: no cover - interface
        raise NotImplementedError


class StorageBackend:
    header: IndexHeader

    @property
    def b(self) -> int:
        return self.header.b

    @property
    def n(self) -> int:
        return self.header.n

    @property
    def num_pages(self) -> int:
        return self.header.num_pages

    def _check(self, pages: list[int]) -> None:
        for p in pages:
            if not 0 <= p < self.header.num_pages:
                raise IndexError(f"page {p} out of range [0, {self.header.num_pages})")

    def submit(self, pages: Iterable[int], stats: SearchStats | None = None) -> ReadHandle:
        want = coalesce(pages)
        self._check(want)
        if stats is not None:
            stats.ssd_page_reads += len(want)
        return self._submit(want)

    def _submit(self, pages: list[int]) -> ReadHandle:  # pragma: no cover - interface
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_pages(backend: StorageBackend, pages: Iterable[int], stats: SearchStats | None = None):
    """Synchronous read. Returns ``[(page, blocks), ...]`` for the distinct pages, in first-seen order."""
    handle = backend.submit(pages, stats)
    got = handle.wait()
    return [(p, got[p]) for p in handle.pages]


class _FileHandle(ReadHandle):
    def __init__(self, pages, future: Future):
        self.pages = tuple(pages)
        self._future = future

    def done(self) -> bool:
        return self._future.done()

    def wait(self):
        return self._future.result()


class FileBackend(StorageBackend):
    """Positional reads of aligned pages from an index file on a worker pool."""

    def __init__(self, path, workers: int = 4):
        self.path = str(path)
        self._fd = os.open(self.path, os.O_RDONLY)
        self.header = IndexHeader.unpack(os.pread(self._fd, _HEADER.size, 0))
        need = (1 + self.header.num_pages) * self.header.page_size
        if os.fstat(self._fd).st_size < need:
            raise ValueError(f"{path}: truncated index file")
        self._pool = ThreadPoolExecutor(max_workers=workers)

    def _read(self, pages):
        h = self.header
        out = {}
        for p in pages:
            raw = os.pread(self._fd, h.page_size, (1 + p) * h.page_size)
            out[p] = decode_page(raw, p, h)
        return out

    def _submit(self, pages):
        return _FileHandle(pages, self._pool.submit(self._read, pages))

    def close(self):
        self._pool.shutdown(wait=True)
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1


class _SimHandle(ReadHandle):
    def __init__(self, pages, latency: float, result):
        self.pages = tuple(pages)
        self.latency = latency
        self._elapsed = 0.0
        self._result = result
        self._waited = False

    def done(self) -> bool:
        return self._waited or self._elapsed >= self.latency

    def advance(self, units: float) -> None:
        self._elapsed += units

    def wait(self):
        self._waited = True
        return self._result


class SimBackend(StorageBackend):
    """In-memory index image with a deterministic latency model.

    A batch of ``p`` pages completes after ``batch_cost + p * page_cost``
    units of caller-reported compute, or when waited on. An empty batch is
    complete immediately.
    """

    def __init__(self, image: bytes, page_cost: float = 5.0, batch_cost: float = 20.0):
        self._image = bytes(image)
        self.header = IndexHeader.unpack(self._image[: _HEADER.size])
        if len(self._image) < (1 + self.header.num_pages) * self.header.page_size:
            raise ValueError("truncated index image")
        self.page_cost = float(page_cost)
        self.batch_cost = float(batch_cost)
        self._lock = threading.Lock()
        self._cache: dict[int, list[DataBlock]] = {}
        self.total_reads = 0

    @classmethod
    def from_file(cls, path, **kw) -> "SimBackend":
        return cls(Path(path).read_bytes(), **kw)

    def _page(self, p: int) -> list[DataBlock]:
        h = self.header
        with self._lock:
            blocks = self._cache.get(p)
            if blocks is None:
                off = (1 + p) * h.page_size
                blocks = decode_page(self._image[off : off + h.page_size], p, h)
                self._cache[p] = blocks
            return blocks

    def _submit(self, pages):
        result = {p: self._page(p) for p in pages}
        with self._lock:
            self.total_reads += len(pages)
        latency = self.batch_cost + self.page_cost * len(pages) if pages else 0.0
        return _SimHandle(pages, latency, result)


def open_backend(path, kind: str = "file", **kw) -> StorageBackend:
    if kind == "file":
        return FileBackend(path, workers=kw.get("workers", 4))
    if kind == "sim":
        return SimBackend.from_file(path, page_cost=kw.get("page_cost", 5.0), batch_cost=kw.get("batch_cost", 20.0))
    raise ValueError(f"unknown backend {kind!r}")
