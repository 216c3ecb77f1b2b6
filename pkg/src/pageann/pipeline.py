"""Glue from (corpus, graph) to a searchable on-disk index in a chosen layout."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import GraphIndex, IdMapping
from .entry import EntryCandidates, load_candidates, save_candidates
from .graph import compute_medoid
from .layout import load_mapping, map_layout, random_order_mapping, remap_graph, save_mapping
from .quantization import PQCodebook, default_chunks, encode, load_codebook, save_codebook, train_pq
from .search import SearchIndex
from .storage import DEFAULT_PAGE_SIZE, FileBackend, SimBackend, blocks_per_page, encode_index

LAYOUTS = ("roundrobin", "mapped", "random")


@dataclass
class BuiltLayout:
    kind: str
    mapping: IdMapping
    graph: GraphIndex  # relabeled adjacency, final ids
    image: bytes
    b: int


def make_layout(dataset, graph: GraphIndex, kind: str, codebook: PQCodebook | None = None,
                codes: np.ndarray | None = None, page_size: int = DEFAULT_PAGE_SIZE,
                seed: int = 0, exact_pack: bool = False) -> BuiltLayout:
    data = np.asarray(getattr(dataset, "data", dataset), dtype=np.float32)
    b = blocks_per_page(data.shape[1], graph.max_degree, page_size)
    if b < 1:
        raise ValueError("data block does not fit in one page")
    if kind == "roundrobin":
        mapping = IdMapping.identity(graph.count)
    elif kind == "mapped":
        mapping = map_layout(graph, data, codebook, b, codes=codes, exact=exact_pack).mapping
    elif kind == "random":
        mapping = random_order_mapping(graph.count, seed)
    else:
        raise ValueError(f"unknown layout {kind!r}; expected one of {LAYOUTS}")
    final_graph = remap_graph(graph, mapping)
    image = encode_index(data[mapping.inverse], final_graph, page_size)
    return BuiltLayout(kind, mapping, final_graph, image, b)


def search_index(built: BuiltLayout, codebook: PQCodebook, codes: np.ndarray, medoid: int,
                 entries: EntryCandidates | None = None, backend=None,
                 page_cost: float = 5.0, batch_cost: float = 20.0) -> SearchIndex:
    """Wrap a built layout. Codes, medoid and entries are given in corpus ids."""
    fwd, inv = built.mapping.forward, built.mapping.inverse
    if backend is None:
        backend = SimBackend(built.image, page_cost=page_cost, batch_cost=batch_cost)
    return SearchIndex(
        backend=backend,
        codebook=codebook,
        codes=np.ascontiguousarray(codes[inv]),
        medoid=int(fwd[medoid]),
        entries=entries.translated(fwd) if entries is not None else None,
        to_original=inv,
    )


def train_codes(dataset, num_chunks: int | None = None, iters: int = 15, seed: int = 0):
    data = np.asarray(getattr(dataset, "data", dataset), dtype=np.float32)
    m = num_chunks or default_chunks(data.shape[1])
    book = train_pq(data, m, iters=iters, seed=seed)
    return book, encode(book, data)


# ---------------------------------------------------------------- index directory

INDEX_FILE = "index.bin"


def save_index_dir(out_dir, built: BuiltLayout, codebook: PQCodebook, codes: np.ndarray,
                   medoid: int, entries: EntryCandidates | None = None) -> Path:
    """Write index, mapping sidecar, codebook and final-id PQ codes to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / INDEX_FILE).write_bytes(built.image)
    save_mapping(built.mapping, out / "mapping.bin")
    save_codebook(codebook, out / "codebook.bin")
    np.save(out / "codes.npy", np.ascontiguousarray(codes[built.mapping.inverse]))
    if entries is not None:
        save_candidates(entries.translated(built.mapping.forward), out / "entries.bin")
    meta = {
        "schema_version": 1,
        "layout": built.kind,
        "b": built.b,
        "n": built.graph.count,
        "medoid": int(built.mapping.forward[medoid]),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return out


def open_index_dir(index_dir, backend: str = "file", page_cost: float = 5.0,
                   batch_cost: float = 20.0, workers: int = 4) -> SearchIndex:
    d = Path(index_dir)
    meta = json.loads((d / "meta.json").read_text())
    if backend == "file":
        be = FileBackend(d / INDEX_FILE, workers=workers)
    elif backend == "sim":
        be = SimBackend.from_file(d / INDEX_FILE, page_cost=page_cost, batch_cost=batch_cost)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    mapping = load_mapping(d / "mapping.bin")
    entries = load_candidates(d / "entries.bin") if (d / "entries.bin").exists() else None
    return SearchIndex(
        backend=be,
        codebook=load_codebook(d / "codebook.bin"),
        codes=np.load(d / "codes.npy"),
        medoid=int(meta["medoid"]),
        entries=entries,
        to_original=mapping.inverse,
    )


def default_medoid(dataset) -> int:
    return compute_medoid(dataset)
