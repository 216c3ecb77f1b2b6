"""Paired benchmark runs over index variants, search algorithms and entry strategies.

Every configuration sees the same queries in the same order. Per-query rows
go to a CSV with fixed columns; aggregates go to a versioned JSON summary.

CSV columns:

    variant, algorithm, entry, query_id   configuration and query index
    recall_at_k                           |result & truth| / k
    ssd_page_reads, cache_hits, hops      search counters
    approach_reads, refine_reads          ssd reads split by search phase
    cost                                  simulated cost units (sim backend)
                                          or wall-clock microseconds (file backend)

A read counts as refine-phase once the running result set's worst member
already belongs to the query's final top-k.
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .core import SearchParams, SearchStats
from .datasets import recall_at_k
from .search import DEFAULT_POOL_PAGES, SearchIndex
from .storage import SimBackend

SCHEMA_VERSION = 1
ALGORITHMS = ("beamsearch", "pagesearch")
ENTRIES = ("medoid", "query-sensitive")


@dataclass(frozen=True)
class BenchRecord:
    variant: str
    algorithm: str
    entry: str
    query_id: int
    recall_at_k: float
    ssd_page_reads: int
    cache_hits: int
    hops: int
    approach_reads: int
    refine_reads: int
    cost: float

    def __post_init__(self):
        if not 0.0 <= self.recall_at_k <= 1.0:
            raise ValueError(f"recall {self.recall_at_k} outside [0, 1]")


CSV_COLUMNS = tuple(f.name for f in fields(BenchRecord))


@dataclass
class Variant:
    name: str
    index: SearchIndex
    params: SearchParams
    pool_pages: int = DEFAULT_POOL_PAGES


def phase_split(stats: SearchStats, final_ids: Sequence[int], to_original=None) -> tuple[int, int]:
    """``(approach_reads, refine_reads)`` from the per-iteration trace."""
    final = set(int(v) for v in final_ids)
    approach = refine = 0
    refining = False
    for pages, worst in stats.trace:
        if not refining and worst >= 0:
            w = int(to_original[worst]) if to_original is not None else worst
            refining = w in final
        if refining:
            refine += pages
        else:
            approach += pages
    return approach, refine


def _one(variant: Variant, algorithm: str, entry: str, qid: int, query, truth) -> BenchRecord:
    idx = variant.index
    t0 = time.perf_counter_ns()
    ids, _, st = idx.query(query, variant.params, algorithm=algorithm, entry=entry,
                           pool_pages=variant.pool_pages)
    micros = (time.perf_counter_ns() - t0) / 1000.0
    k = variant.params.k
    approach, refine = phase_split(st, ids, idx.to_original)
    cost = st.cost_units if isinstance(idx.backend, SimBackend) else micros
    return BenchRecord(
        variant=variant.name,
        algorithm=algorithm,
        entry=entry,
        query_id=qid,
        recall_at_k=recall_at_k(ids, list(truth[:k]), k),
        ssd_page_reads=st.ssd_page_reads,
        cache_hits=st.cache_hits,
        hops=st.hops,
        approach_reads=approach,
        refine_reads=refine,
        cost=float(cost),
    )


def run_bench(variants: Sequence[Variant], queries, truth, algorithms=ALGORITHMS,
              entries=("medoid",), threads: int = 1) -> list[BenchRecord]:
    """All configurations, paired by query; rows ordered by configuration then query id."""
    if not variants:
        raise ValueError("no variants to benchmark")
    ks = {v.params.k for v in variants}
    if len(ks) != 1:
        raise ValueError(f"config mismatch: variants use different k {sorted(ks)}")
    k = ks.pop()
    queries = np.asarray(queries, dtype=np.float32)
    truth = np.asarray(truth)
    if len(truth) != len(queries):
        raise ValueError("ground truth and queries differ in length")
    if truth.shape[1] < k:
        raise ValueError(f"ground truth has {truth.shape[1]} neighbors per query, need k={k}")
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {a!r}")
    for e in entries:
        if e not in ENTRIES:
            raise ValueError(f"unknown entry strategy {e!r}")
        if e == "query-sensitive" and any(v.index.entries is None for v in variants):
            raise ValueError("query-sensitive entry needs candidates on every variant")

    out: list[BenchRecord] = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for v in variants:
            for a in algorithms:
                for e in entries:
                    jobs = [pool.submit(_one, v, a, e, i, queries[i], truth[i]) for i in range(len(queries))]
                    out.extend(j.result() for j in jobs)
    return out


def write_csv(records: Sequence[BenchRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([repr(x) if isinstance(x, float) else x for x in asdict(r).values()])


def read_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ints = {"query_id", "ssd_page_reads", "cache_hits", "hops", "approach_reads", "refine_reads"}
    floats = {"recall_at_k", "cost"}
    return [BenchRecord(**{c: int(r[c]) if c in ints else float(r[c]) if c in floats else r[c]
                           for c in CSV_COLUMNS}) for r in rows]


def summarize(records: Sequence[BenchRecord], backend: str = "sim") -> dict:
    groups: dict[tuple[str, str, str], list[BenchRecord]] = {}
    for r in records:
        groups.setdefault((r.variant, r.algorithm, r.entry), []).append(r)
    configs = []
    for (variant, algorithm, entry), rows in groups.items():
        cost = float(np.mean([r.cost for r in rows]))
        item = {
            "variant": variant,
            "algorithm": algorithm,
            "entry": entry,
            "queries": len(rows),
            "recall_at_k": float(np.mean([r.recall_at_k for r in rows])),
            "mean_ssd_page_reads": float(np.mean([r.ssd_page_reads for r in rows])),
            "mean_cache_hits": float(np.mean([r.cache_hits for r in rows])),
            "mean_hops": float(np.mean([r.hops for r in rows])),
            "mean_approach_reads": float(np.mean([r.approach_reads for r in rows])),
            "mean_refine_reads": float(np.mean([r.refine_reads for r in rows])),
        }
        if backend == "file":
            item["mean_latency_us"] = cost
            total_s = sum(r.cost for r in rows) / 1e6
            item["qps"] = len(rows) / total_s if total_s > 0 else None
        else:
            item["mean_cost_units"] = cost
        configs.append(item)
    return {"schema_version": SCHEMA_VERSION, "backend": backend, "configs": configs}


def write_summary(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
