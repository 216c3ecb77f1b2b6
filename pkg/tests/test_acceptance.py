"""Acceptance suite on the desk-scale reference corpus.

Reference corpus: 20,000 clustered points in 16 dimensions (50 Gaussian
clusters, 100 held-out queries), Vamana R=32, 4 KB pages (b=20), PQ with 8
chunks. Each test logs one PASS/FAIL line, repeated in the terminal summary.
"""
import tempfile
from pathlib import Path

import networkx as nx
import numpy as np
import pytest

from pageann.bench import Variant, run_bench, write_csv
from pageann.compactness import algebraic_connectivity, graph_from_edges, laplacian, layout_report
from pageann.core import GraphIndex, SearchParams, round_robin_layout, validate_layout
from pageann.datasets import clustered_dataset, ground_truth, recall_at_k
from pageann.entry import build_entry_candidates
from pageann.graph import BuildParams, build_vamana, compute_medoid
from pageann.layout import _temp_layout, ffd_bins, map_layout, merge, remap_blocks, remap_graph
from pageann.pipeline import make_layout, search_index, train_codes
from pageann.quantization import train_pq

SEEDS = {"data": 7, "graph": 1, "pq": 3, "entries": 2}
PARAMS = SearchParams(10, 100, 4)  # k, L_s, beam
EPS = 1e-9


def reference_build():
    base, queries, _ = clustered_dataset(20000, 16, 50, seed=SEEDS["data"], n_queries=100)
    graph = build_vamana(base, BuildParams(R=32, L_build=64), seed=SEEDS["graph"])
    book, codes = train_codes(base, 8, iters=15, seed=SEEDS["pq"])
    medoid = compute_medoid(base)
    layouts = {kind: make_layout(base, graph, kind, book, codes) for kind in ("roundrobin", "mapped")}
    return {
        "base": base,
        "queries": queries,
        "graph": graph,
        "book": book,
        "codes": codes,
        "medoid": medoid,
        "truth": ground_truth(base, queries, 10),
        "layouts": layouts,
    }


@pytest.fixture(scope="module")
def ref():
    return reference_build()


def _index(ref, kind, entries=None):
    return search_index(ref["layouts"][kind], ref["book"], ref["codes"], ref["medoid"], entries)


def _run(idx, ref, algorithm, entry="medoid", pool=128):
    rows = []
    for q, t in zip(ref["queries"], ref["truth"]):
        ids, dists, st = idx.query(q, PARAMS, algorithm, entry, pool_pages=pool)
        rows.append((recall_at_k(ids, t, 10), st.ssd_page_reads, st.hops, ids, dists))
    return rows


def test_criterion_01_mapping_bijection_and_isomorphism(record):
    rng = np.random.default_rng(101)
    failures = []
    for trial in range(50):
        n = int(rng.integers(100, 2001))
        R = int(rng.choice([8, 16, 32]))
        b = int(rng.integers(2, 9))
        data = rng.normal(size=(n, 8)).astype(np.float32)
        g = build_vamana(data, BuildParams(R=R, L_build=max(R, 32)), seed=trial)
        if trial % 2:
            m = map_layout(g, data, train_pq(data, 2, iters=3, seed=trial), b)
        else:
            m = map_layout(g, data, None, b, exact=True)
        fwd, inv = m.mapping.forward, m.mapping.inverse
        ok = np.array_equal(np.sort(fwd), np.arange(n))
        ok &= np.array_equal(inv[fwd], np.arange(n)) and np.array_equal(fwd[inv], np.arange(n))
        ok &= np.array_equal(fwd, m.mapping.f_surj[m.mapping.f_inj])
        ok &= validate_layout(m.final, n) == []
        remapped = remap_graph(g, m.mapping)
        want = {(int(fwd[u]), int(fwd[v])) for u in range(n) for v in g.out(u)}
        got = {(u, int(v)) for u in range(n) for v in remapped.out(u)}
        ok &= want == got
        blocks = remap_blocks(g, data, m.mapping)
        ok &= all(blk.id == j and np.array_equal(blk.vector, data[inv[j]]) for j, blk in enumerate(blocks))
        if not ok:
            failures.append((trial, n, R, b))
    assert record(1, not failures, f"50 builds, failures={failures}"), failures


def test_criterion_02_spectral_oracle(record):
    rng = np.random.default_rng(202)
    worst, mismatched = 0.0, 0
    for _ in range(500):
        n = int(rng.integers(2, 13))
        p = rng.uniform(0.05, 0.9)
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
        sg = graph_from_edges(n, edges)
        lap = laplacian(sg)
        lam = algebraic_connectivity(lap)
        worst = max(worst, abs(lam - np.linalg.eigvalsh(lap)[1]))
        nxg = nx.Graph()
        nxg.add_nodes_from(range(n))
        nxg.add_edges_from(edges)
        mismatched += (lam <= EPS) != (not nx.is_connected(nxg))
    ok = worst <= 1e-8 and mismatched == 0
    assert record(2, ok, f"max |lambda2 - eigvalsh| = {worst:.2e}, zero/disconnected mismatches = {mismatched}")


def test_criterion_03_page_compactness(ref, record):
    g = ref["graph"]
    mapped = ref["layouts"]["mapped"]
    b = mapped.b
    assert b >= 3
    rep = layout_report(mapped.graph, round_robin_layout(g.count, b))
    rr = layout_report(g, round_robin_layout(g.count, b))
    low = [p.page_index for p in rep.connected_pages if p.gamma < 0.5 - EPS]
    ok = (not low and rep.connected_mean_gamma >= 0.5 and rr.fraction_zero_gamma >= 0.5
          and rr.mean_gamma <= 0.1)
    detail = (f"b={b}, connected mapped pages={len(rep.connected_pages)}, below 0.5={len(low)}, "
              f"connected mean={rep.connected_mean_gamma:.4f}, mapped mean={rep.mean_gamma:.4f}; "
              f"round-robin zero-gamma share={rr.fraction_zero_gamma:.4f}, mean={rr.mean_gamma:.6f}")
    assert record(3, ok, detail), detail


def test_criterion_04_round_robin_random_regular(record):
    disconnected = total = 0
    per_graph = []
    for seed in range(100):
        rr = nx.random_regular_graph(16, 5000, seed=seed)
        g = GraphIndex.from_lists([sorted(rr.neighbors(v)) for v in range(5000)], max_degree=16)
        rep = layout_report(g, round_robin_layout(5000, 4))
        n_pages = len(rep.scored)
        disconnected += round(rep.fraction_disconnected * n_pages)
        total += n_pages
        per_graph.append(rep.fraction_disconnected)
    frac = disconnected / total
    assert record(4, frac >= 0.9, f"disconnected pages {frac:.4f} (per-graph min {min(per_graph):.4f})")


@pytest.fixture(scope="module")
def search_runs(ref):
    rr, mapped = _index(ref, "roundrobin"), _index(ref, "mapped")
    return {
        "beam_rr": _run(rr, ref, "beamsearch"),
        "page_mapped": _run(mapped, ref, "pagesearch"),
    }


def test_criterion_05_search_accuracy(search_runs, record):
    beam = np.mean([r[0] for r in search_runs["beam_rr"]])
    page = np.mean([r[0] for r in search_runs["page_mapped"]])
    ok = beam >= 0.95 and page >= beam - 0.01
    assert record(5, ok, f"beamsearch recall@10={beam:.3f}, pagesearch(mapped)={page:.3f}")


def test_criterion_06_io_reduction(search_runs, record):
    rb = np.mean([r[0] for r in search_runs["beam_rr"]])
    rp = np.mean([r[0] for r in search_runs["page_mapped"]])
    io_b = np.mean([r[1] for r in search_runs["beam_rr"]])
    io_p = np.mean([r[1] for r in search_runs["page_mapped"]])
    reduction = 1 - io_p / io_b
    ok = abs(rb - rp) <= 0.01 and reduction >= 0.2
    detail = (f"reads/query {io_b:.2f} -> {io_p:.2f}, ratio={io_p / io_b:.3f} "
              f"(reduction {100 * reduction:.1f}%), recall {rb:.3f} vs {rp:.3f}")
    assert record(6, ok, detail)


def test_criterion_07_entry_hop_reduction(ref, record):
    g, base = ref["graph"], ref["base"]
    c64 = build_entry_candidates(g, base, 64, seed=SEEDS["entries"], medoid=ref["medoid"])
    c1 = build_entry_candidates(g, base, 1, seed=SEEDS["entries"], medoid=ref["medoid"])
    idx64, idx1 = _index(ref, "roundrobin", c64), _index(ref, "roundrobin", c1)
    med = np.array([r[2] for r in _run(idx64, ref, "beamsearch", "medoid")])
    qs = np.array([r[2] for r in _run(idx64, ref, "beamsearch", "query-sensitive")])
    one_med = [r[2] for r in _run(idx1, ref, "beamsearch", "medoid")]
    one_qs = [r[2] for r in _run(idx1, ref, "beamsearch", "query-sensitive")]
    strict = float(np.mean(qs < med))
    ok = qs.mean() <= med.mean() and strict >= 0.3 and one_med == one_qs
    detail = (f"mean hops medoid={med.mean():.2f}, query-sensitive={qs.mean():.2f}, "
              f"strict on {100 * strict:.0f}% of queries; n_cluster=1 identical={one_med == one_qs}")
    assert record(7, ok, detail)


def _optimal_bins(sizes, b):
    n = len(sizes)
    load = [sum(sizes[i] for i in range(n) if mask >> i & 1) for mask in range(1 << n)]
    best = [0] + [n + 1] * ((1 << n) - 1)
    for mask in range(1, 1 << n):
        low = mask & -mask  # the lowest item opens the bin, so each partition is counted once
        rest = mask ^ low
        sub = rest
        while True:
            bin_ = sub | low
            if load[bin_] <= b:
                best[mask] = min(best[mask], best[mask ^ bin_] + 1)
            if sub == 0:
                break
            sub = (sub - 1) & rest
    return best[-1]


def test_criterion_08_ffd_quality(record):
    rng = np.random.default_rng(808)
    bad = []
    for trial in range(200):
        b = int(rng.integers(2, 9))
        sizes = rng.integers(1, b + 1, size=int(rng.integers(1, 13))).tolist()
        groups, nxt = [], 0
        for s in sizes:
            groups.append(list(range(nxt, nxt + s)))
            nxt += s
        temp, _ = _temp_layout(groups, b)
        final, _ = merge(temp, b)
        opt = _optimal_bins(sizes, b)
        bound = opt * 11 / 9 + 1
        counts = final.valid_counts()
        if (final.num_pages > bound or len(ffd_bins(sizes, b)) > bound
                or any(c != b for c in counts[:-1])):
            bad.append((trial, sizes, b))
    assert record(8, not bad, f"200 multisets, violations={len(bad)}"), bad[:3]


def test_criterion_09_capacity_zero_equivalence(ref, record):
    idx = _index(ref, "mapped")
    beam = _run(idx, ref, "beamsearch")
    off = _run(idx, ref, "pagesearch", pool=0)
    same = sum(a[3] == b[3] and a[4] == b[4] for a, b in zip(beam, off))
    assert record(9, same == len(beam), f"identical result sets on {same}/{len(beam)} queries")


def _bench_csv(build, path):
    cands = build_entry_candidates(build["graph"], build["base"], 64, seed=SEEDS["entries"],
                                   medoid=build["medoid"])
    variants = [Variant(kind, search_index(build["layouts"][kind], build["book"], build["codes"],
                                           build["medoid"], cands), PARAMS)
                for kind in ("roundrobin", "mapped")]
    recs = run_bench(variants, build["queries"], build["truth"], entries=("medoid", "query-sensitive"))
    write_csv(recs, path)
    return Path(path).read_bytes()


def test_criterion_10_bench_determinism(ref, record):
    with tempfile.TemporaryDirectory() as tmp:
        first = _bench_csv(ref, Path(tmp) / "a.csv")
        second = _bench_csv(reference_build(), Path(tmp) / "b.csv")
    ok = first == second
    assert record(10, ok, f"two full runs, {len(first)} CSV bytes each, identical={ok}")
