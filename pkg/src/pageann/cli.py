"""``pageann`` command line.

Typical flow::

    pageann ingest --synthetic --n 20000 --dim 16 --clusters 50 --n-queries 100 --seed 7 --out work
    pageann build --data work/base.fvecs --out work/build --seed 1
    pageann entries --data work/base.fvecs --build work/build --n-cluster 64 --seed 2
    pageann map --data work/base.fvecs --build work/build --layout mapped --seed 0 --out work/mapped
    pageann groundtruth --data work/base.fvecs --queries work/queries.fvecs --k 10 --out work/gt.ivecs
    pageann bench --variant mapped=work/mapped --queries work/queries.fvecs --truth work/gt.ivecs \
        --backend sim --seed 0 --csv bench.csv --json bench.json

Every option may also come from ``--config FILE`` (JSON or YAML). Keys are
option names with dashes or underscores; a section named after the
subcommand overrides top-level keys. Explicit flags win over the file.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as benchmod
from .compactness import layout_report
from .core import SearchParams, round_robin_layout
from .datasets import (clustered_dataset, ground_truth, ingest_fvecs, read_fvecs, read_ivecs,
                       recall_at_k, write_fvecs, write_ivecs)
from .entry import build_entry_candidates, load_candidates, save_candidates
from .graph import BuildParams, build_vamana, compute_medoid, load_graph, save_graph
from .pipeline import LAYOUTS, INDEX_FILE, make_layout, open_index_dir, save_index_dir, train_codes
from .quantization import load_codebook, save_codebook
from .storage import DEFAULT_PAGE_SIZE, decode_index

_DEFAULTS: dict[str, dict] = {}


class CLIError(Exception):
    pass


def _opt(p: argparse.ArgumentParser, flag: str, default=None, **kw):
    """Option whose default is applied after the config file is merged."""
    dest = flag.lstrip("-").replace("-", "_")
    _DEFAULTS.setdefault(p.prog, {})[dest] = default
    if default is not None and "help" in kw:
        kw["help"] += f" (default: {default})"
    p.add_argument(flag, dest=dest, default=None, **kw)


def _load_config(path) -> dict:
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        cfg = yaml.safe_load(text) or {}
    else:
        cfg = json.loads(text)
    if not isinstance(cfg, dict):
        raise CLIError(f"{path}: config must be a mapping")
    return cfg


def _merge(args: argparse.Namespace, prog: str) -> argparse.Namespace:
    defaults = _DEFAULTS.get(prog, {})
    if args.config:
        cfg = _load_config(args.config)
        section = cfg.pop(args.command, None) or {}
        flat = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
        flat.update(section)
        for key, value in flat.items():
            dest = key.replace("-", "_")
            if dest not in defaults:
                raise CLIError(f"config key {key!r} is not an option of {args.command!r}")
            if getattr(args, dest) is None:
                setattr(args, dest, value)
    for dest, value in defaults.items():
        if getattr(args, dest) is None:
            setattr(args, dest, value)
    return args


def _need(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise CLIError(f"--{n.replace('_', '-')} is required")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------- commands

def cmd_ingest(args):
    _need(args, "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        _need(args, "seed")
        base, queries, _ = clustered_dataset(args.n, args.dim, args.clusters, seed=args.seed,
                                             spread=args.spread, n_queries=args.n_queries)
        write_fvecs(out / "base.fvecs", base)
        if len(queries):
            write_fvecs(out / "queries.fvecs", queries)
        _log(f"synthetic base {base.shape}, queries {queries.shape}")
        return
    _need(args, "input")
    ds = ingest_fvecs(args.input)
    write_fvecs(out / "base.fvecs", ds.data)
    if args.queries:
        q = ingest_fvecs(args.queries)
        if q.dim != ds.dim:
            raise CLIError(f"queries have dim {q.dim}, base has {ds.dim}")
        write_fvecs(out / "queries.fvecs", q.data)
    _log(f"ingested {ds.count} vectors of dim {ds.dim}")


def cmd_build(args):
    _need(args, "data", "out", "seed")
    ds = ingest_fvecs(args.data)
    params = BuildParams(R=args.R, L_build=args.L_build, alpha1=args.alpha1, alpha2=args.alpha2)
    graph = build_vamana(ds, params, seed=args.seed)
    book, codes = train_codes(ds, args.pq_chunks, iters=args.pq_iters, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_graph(graph, out / "graph.bin")
    save_codebook(book, out / "codebook.bin")
    np.save(out / "codes.npy", codes)
    meta = {"schema_version": 1, "n": ds.count, "dim": ds.dim, "medoid": compute_medoid(ds),
            "R": params.R, "L_build": params.L_build, "alpha1": params.alpha1, "alpha2": params.alpha2,
            "pq_chunks": book.num_chunks, "seed": args.seed}
    (out / "build.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    _log(f"graph: {ds.count} vertices, {graph.edge_count()} edges, medoid {meta['medoid']}")


def _build_meta(build_dir: Path) -> dict:
    return json.loads((build_dir / "build.json").read_text())


def cmd_entries(args):
    _need(args, "data", "build", "seed")
    d = Path(args.build)
    ds = ingest_fvecs(args.data)
    meta = _build_meta(d)
    cands = build_entry_candidates(load_graph(d / "graph.bin"), ds, args.n_cluster, seed=args.seed,
                                   batch_size=args.batch_size, iters=args.iters,
                                   L_build=meta["L_build"], medoid=meta["medoid"])
    save_candidates(cands, d / "entries.bin")
    _log(f"{len(cands)} entry candidates from {args.n_cluster} clusters")


def cmd_map(args):
    _need(args, "data", "build", "out", "seed")
    if args.layout not in LAYOUTS:
        raise CLIError(f"--layout must be one of {LAYOUTS}")
    d = Path(args.build)
    ds = ingest_fvecs(args.data)
    meta = _build_meta(d)
    graph = load_graph(d / "graph.bin")
    book = load_codebook(d / "codebook.bin")
    codes = np.load(d / "codes.npy")
    built = make_layout(ds, graph, args.layout, book, codes, page_size=args.page_size,
                        seed=args.seed, exact_pack=args.exact_pack)
    entries = load_candidates(d / "entries.bin") if (d / "entries.bin").exists() else None
    save_index_dir(args.out, built, book, codes, meta["medoid"], entries)
    _log(f"{args.layout} layout: b={built.b}, {len(built.image) // args.page_size - 1} pages")


def cmd_analyze(args):
    _need(args, "index")
    h, _, graph = decode_index((Path(args.index) / INDEX_FILE).read_bytes())
    report = layout_report(graph, round_robin_layout(h.n, h.b))
    if args.csv:
        report.write_csv(args.csv)
    if args.json:
        report.write_json(args.json)
    print(json.dumps(report.summary(), indent=2, sort_keys=True))


def cmd_groundtruth(args):
    _need(args, "data", "queries", "out")
    gt = ground_truth(read_fvecs(args.data), read_fvecs(args.queries), args.k)
    write_ivecs(args.out, gt)
    _log(f"ground truth {gt.shape}")


def _params(args) -> SearchParams:
    return SearchParams(k=args.k, search_width=args.L, beam=args.beam)


def cmd_query(args):
    _need(args, "index", "queries")
    idx = open_index_dir(args.index, backend=args.backend, page_cost=args.sim_page_cost,
                         batch_cost=args.sim_batch_cost)
    queries = read_fvecs(args.queries)
    truth = read_ivecs(args.truth) if args.truth else None
    params = _params(args)
    results, reads, hits, hops, rec = [], [], [], [], []
    try:
        for i, q in enumerate(queries):
            ids, _, st = idx.query(q, params, algorithm=args.algorithm, entry=args.entry,
                                   pool_pages=args.pool_pages)
            results.append(ids)
            reads.append(st.ssd_page_reads)
            hits.append(st.cache_hits)
            hops.append(st.hops)
            if truth is not None:
                rec.append(recall_at_k(ids, truth[i][: params.k], params.k))
    finally:
        idx.backend.close()
    if args.out:
        write_ivecs(args.out, np.asarray(results, dtype=np.int32))
    summary = {"queries": len(queries), "mean_ssd_page_reads": float(np.mean(reads)),
               "mean_cache_hits": float(np.mean(hits)), "mean_hops": float(np.mean(hops))}
    if rec:
        summary["recall_at_k"] = float(np.mean(rec))
    print(json.dumps(summary, indent=2, sort_keys=True))


def cmd_bench(args):
    _need(args, "variant", "queries", "truth", "seed")
    params = _params(args)
    variants = []
    for spec in args.variant:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise CLIError(f"--variant expects NAME=INDEX_DIR, got {spec!r}")
        idx = open_index_dir(path, backend=args.backend, page_cost=args.sim_page_cost,
                             batch_cost=args.sim_batch_cost)
        variants.append(benchmod.Variant(name, idx, params, pool_pages=args.pool_pages))
    try:
        records = benchmod.run_bench(variants, read_fvecs(args.queries), read_ivecs(args.truth),
                                     algorithms=args.algorithms, entries=args.entries, threads=args.threads)
    finally:
        for v in variants:
            v.index.backend.close()
    summary = benchmod.summarize(records, backend=args.backend)
    summary["seed"] = args.seed
    if args.csv:
        benchmod.write_csv(records, args.csv)
    if args.json:
        benchmod.write_summary(summary, args.json)
    print(json.dumps(summary, indent=2, sort_keys=True))


# ---------------------------------------------------------------- parser

def _search_opts(p):
    _opt(p, "--k", 10, type=int, help="neighbors to return")
    _opt(p, "--L", 100, type=int, help="search list width L_s")
    _opt(p, "--beam", 4, type=int, help="beam width B")
    _opt(p, "--backend", "file", choices=("file", "sim"), help="storage backend")
    _opt(p, "--sim-page-cost", 5.0, type=float, help="simulated cost per page read")
    _opt(p, "--sim-batch-cost", 20.0, type=float, help="simulated cost per read batch")
    _opt(p, "--pool-pages", 128, type=int, help="page heap capacity, 0 disables the pool")


def build_parser() -> argparse.ArgumentParser:
    _DEFAULTS.clear()
    parser = argparse.ArgumentParser(prog="pageann", description="Disk-resident graph ANN index toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON or YAML file with option values")
        p.set_defaults(func=fn, prog=p.prog)
        return p

    p = command("ingest", cmd_ingest, "validate fvecs input or generate a synthetic corpus")
    _opt(p, "--input", help="base vectors (.fvecs)")
    _opt(p, "--queries", help="query vectors (.fvecs)")
    _opt(p, "--out", help="output directory")
    p.add_argument("--synthetic", action="store_true", default=None, help="generate Gaussian clusters")
    _DEFAULTS[p.prog]["synthetic"] = False
    _opt(p, "--n", 20000, type=int, help="synthetic base size")
    _opt(p, "--dim", 16, type=int, help="synthetic dimension")
    _opt(p, "--clusters", 50, type=int, help="synthetic cluster count")
    _opt(p, "--n-queries", 100, type=int, help="synthetic query count")
    _opt(p, "--spread", 1.0, type=float, help="synthetic cluster std")
    _opt(p, "--seed", type=int, help="RNG seed (required with --synthetic)")

    p = command("build", cmd_build, "build the graph and train PQ codes")
    _opt(p, "--data", help="base vectors (.fvecs)")
    _opt(p, "--out", help="build directory")
    _opt(p, "--R", 32, type=int, help="max out-degree")
    _opt(p, "--L-build", 64, type=int, help="build search list size")
    _opt(p, "--alpha1", 1.0, type=float, help="first-pass prune alpha")
    _opt(p, "--alpha2", 1.2, type=float, help="second-pass prune alpha")
    _opt(p, "--pq-chunks", type=int, help="PQ chunks M (default dim/4)")
    _opt(p, "--pq-iters", 15, type=int, help="k-means iterations per chunk")
    _opt(p, "--seed", type=int, help="RNG seed (required)")

    p = command("entries", cmd_entries, "compute query-sensitive entry candidates")
    _opt(p, "--data", help="base vectors (.fvecs)")
    _opt(p, "--build", help="build directory")
    _opt(p, "--n-cluster", 64, type=int, help="k-means clusters")
    _opt(p, "--batch-size", 1024, type=int, help="mini-batch size")
    _opt(p, "--iters", 100, type=int, help="mini-batch iterations")
    _opt(p, "--seed", type=int, help="RNG seed (required)")

    p = command("map", cmd_map, "lay the graph out on pages and write an index directory")
    _opt(p, "--data", help="base vectors (.fvecs)")
    _opt(p, "--build", help="build directory")
    _opt(p, "--out", help="index directory")
    _opt(p, "--layout", "mapped", choices=LAYOUTS, help="page layout")
    _opt(p, "--page-size", DEFAULT_PAGE_SIZE, type=int, help="page size in bytes")
    p.add_argument("--exact-pack", action="store_true", default=None,
                   help="order star neighbors by exact rather than PQ distance")
    _DEFAULTS[p.prog]["exact_pack"] = False
    _opt(p, "--seed", type=int, help="RNG seed (required; used by the random layout)")

    p = command("analyze", cmd_analyze, "per-page compactness of an index")
    _opt(p, "--index", help="index directory")
    _opt(p, "--csv", help="per-page CSV output")
    _opt(p, "--json", help="summary JSON output")

    p = command("groundtruth", cmd_groundtruth, "exact k nearest neighbors by brute force")
    _opt(p, "--data", help="base vectors (.fvecs)")
    _opt(p, "--queries", help="query vectors (.fvecs)")
    _opt(p, "--k", 10, type=int, help="neighbors per query")
    _opt(p, "--out", help="output .ivecs")

    p = command("query", cmd_query, "run queries against an index directory")
    _opt(p, "--index", help="index directory")
    _opt(p, "--queries", help="query vectors (.fvecs)")
    _opt(p, "--truth", help="ground truth (.ivecs) for recall")
    _opt(p, "--out", help="result ids (.ivecs)")
    _opt(p, "--algorithm", "pagesearch", choices=benchmod.ALGORITHMS, help="search algorithm")
    _opt(p, "--entry", "medoid", choices=benchmod.ENTRIES, help="entry strategy")
    _search_opts(p)

    p = command("bench", cmd_bench, "paired benchmark over variants, algorithms and entries")
    _opt(p, "--variant", action="append", help="NAME=INDEX_DIR, repeatable")
    _opt(p, "--queries", help="query vectors (.fvecs)")
    _opt(p, "--truth", help="ground truth (.ivecs)")
    _opt(p, "--algorithms", list(benchmod.ALGORITHMS), nargs="+", choices=benchmod.ALGORITHMS,
         help="algorithms to run")
    _opt(p, "--entries", ["medoid"], nargs="+", choices=benchmod.ENTRIES, help="entry strategies")
    _opt(p, "--threads", 1, type=int, help="concurrent queries")
    _opt(p, "--csv", help="per-query CSV output")
    _opt(p, "--json", help="summary JSON output")
    _opt(p, "--seed", type=int, help="RNG seed (required, recorded in the summary)")
    _search_opts(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _merge(args, args.prog)
        args.func(args)
    except (CLIError, ValueError, FileNotFoundError) as exc:
        print(f"pageann {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
