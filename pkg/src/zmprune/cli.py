"""Command-line interface.

Subcommands: extract, build-index, query, reduce, bench-reduction,
bench-time, bench-precision.  Each writes CSV reports plus a
``manifest-<command>.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from zmprune import __version__
from zmprune import bench
from zmprune.dataset import CorpusError, load_corpus, load_image, split as make_split
from zmprune.features import extract_table, write_table_csv
from zmprune.index import (IndexBuildError, IndexFormatError, build_index_from_table, load_index,
                           save_index, write_stats_csv)
from zmprune.prefilter import FilterMode, diagnostic_rows, filter_candidates
from zmprune.retrieval import retrieve
from zmprune.zernike import DEFAULT_INDICES, extract_features, format_indices, parse_indices

log = logging.getLogger("zmprune")

INDEX_FILE = "index.json"


def _add_corpus_args(p):
    p.add_argument("--corpus", required=True, help="corpus root directory")
    p.add_argument("--layout", default="auto", choices=["auto", "corel", "folders"])
    p.add_argument("--per-category", type=int, default=100,
                   help="images per category for the corel layout (default 100)")
    p.add_argument("--workers", type=int, default=1, help="processes for feature extraction")


def _add_feature_args(p):
    p.add_argument("--features", default=format_indices(DEFAULT_INDICES),
                   help="moment indices 'p,q;p,q;...' (default %(default)s)")


def _add_bench_args(p):
    _add_corpus_args(p)
    _add_feature_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", default="all", help="single:<i> | all | union (default all)")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--index", help="prebuilt index file (otherwise built from the corpus)")
    p.add_argument("--indexed-set", default="train", choices=["train", "all"])
    p.add_argument("--pooled", action="store_true",
                   help="pool counts across queries instead of averaging per query")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zmprune", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true",
                        help="log progress; query also emits per-channel diagnostics")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="write the feature table of every corpus image")
    _add_corpus_args(p)
    _add_feature_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-index", parents=[common], help="offline phase: build the interval index")
    _add_corpus_args(p)
    _add_feature_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--indexed-set", default="train", choices=["train", "all"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("query", parents=[common], help="online phase for one image: prune and rank")
    p.add_argument("--index", required=True)
    p.add_argument("--image", required=True, help="query image file")
    p.add_argument("--mode", default="all")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--out", help="directory for candidates/ranking/diagnostics CSV")

    p = sub.add_parser("reduce", parents=[common], help="reduced database for every test query")
    _add_bench_args(p)

    p = sub.add_parser("bench-reduction", parents=[common], help="remaining-percentage reports, one CSV per channel mode")
    _add_bench_args(p)
    p = sub.add_parser("bench-time", parents=[common], help="ranking time with and without reduction")
    _add_bench_args(p)
    p = sub.add_parser("bench-precision", parents=[common], help="precision at k before and after reduction")
    _add_bench_args(p)
    p.add_argument("--no-prune", action="store_true", help="rank the full database on both sides")
    return ap


def _config(args) -> bench.BenchConfig:
    return bench.BenchConfig(
        corpus=Path(args.corpus), layout=args.layout, seed=args.seed,
        indices=parse_indices(args.features), mode=FilterMode.parse(args.mode), k=args.k,
        reps=args.reps, out=Path(args.out), per_category=args.per_category,
        indexed_set=args.indexed_set, pooled=args.pooled, workers=args.workers,
        index_path=None if args.index is None else Path(args.index),
    ).validate()


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_extract(args) -> int:
    indices = parse_indices(args.features)
    corpus = load_corpus(args.corpus, args.layout, args.per_category)
    out = _out_dir(args.out)
    table = extract_table(corpus, corpus.image_ids, indices, workers=args.workers)
    write_table_csv(table, out / "features.csv")
    bench.write_manifest({"corpus": str(args.corpus), "layout": corpus.layout,
                          "per_category": args.per_category, "features": format_indices(indices)},
                         out, "extract", ["features.csv"])
    print(f"extracted {len(table)} images x {len(indices)} features -> {out / 'features.csv'}")
    return 0


def cmd_build_index(args) -> int:
    indices = parse_indices(args.features)
    corpus = load_corpus(args.corpus, args.layout, args.per_category)
    sp = make_split(corpus, args.seed)
    ids = sp.train_ids if args.indexed_set == "train" else corpus.image_ids
    empty = [c.id for c in corpus.categories if not set(c.image_ids) & set(ids)]
    if empty:
        raise IndexBuildError(f"categories {empty} have no {args.indexed_set} images")
    table = extract_table(corpus, sorted(ids), indices, workers=args.workers)
    index = build_index_from_table(table, sp.seed, args.indexed_set)
    out = _out_dir(args.out)
    save_index(index, out / INDEX_FILE)
    write_stats_csv(index, out / "index_stats.csv")
    bench.write_manifest({"corpus": str(args.corpus), "layout": corpus.layout, "seed": args.seed,
                          "per_category": args.per_category, "features": format_indices(indices),
                          "indexed_set": args.indexed_set},
                         out, "build-index", [INDEX_FILE, "index_stats.csv"])
    print(f"indexed {len(index)} images, {len(index.category_ids)} categories -> {out / INDEX_FILE}")
    for ch in index.channels:
        centers = " ".join(f"{s.c:.6g}" for s in ch.stats)
        print(f"  {ch.feature_index.label}: r_max={ch.r_max:.6g} centers=[{centers}]")
    return 0


def cmd_query(args) -> int:
    index = load_index(args.index)
    mode = FilterMode.parse(args.mode)
    fv = extract_features(load_image(args.image), index.indices)
    cands = filter_candidates(fv, index, mode)
    res = retrieve(fv, cands, index, args.k)
    flag = " (empty intersection; fell back to full database)" if cands.fallback else ""
    print(f"survivors: {len(cands)}/{len(index)}{flag}")
    print(" ".join(str(int(i)) for i in cands.image_ids))
    diag = diagnostic_rows(fv, index, mode)
    if args.verbose:
        _write_dicts(sys.stdout, diag)
    if args.out:
        out = _out_dir(args.out)
        with (out / "candidates.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image_id", "category_id"])
            for i, row in zip(cands.image_ids, cands.rows):
                w.writerow([int(i), int(index.features.categories[row])])
        bench.write_rankings_csv([(Path(args.image).stem, res)], out / "ranking.csv")
        outputs = ["candidates.csv", "ranking.csv"]
        if args.verbose:
            with (out / "diagnostics.csv").open("w", newline="", encoding="utf-8") as fh:
                _write_dicts(fh, diag)
            outputs.append("diagnostics.csv")
        bench.write_manifest({"index": str(args.index), "image": str(args.image), "mode": mode.label,
                              "k": args.k}, out, "query", outputs)
    return 0


def _write_dicts(fh, rows):
    if not rows:
        return
    w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def cmd_reduce(args) -> int:
    cfg = _config(args)
    ex = bench.Experiment.prepare(cfg)
    out = _out_dir(cfg.out)
    name = bench.mode_filename("reduced", cfg.mode.label)
    with (out / name).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "category_id", "n_candidates", "fallback", "candidate_ids"])
        for qid, cat, v in zip(ex.queries.ids, ex.queries.categories, ex.queries.values):
            c = filter_candidates(v, ex.index, cfg.mode)
            w.writerow([int(qid), int(cat), len(c), int(c.fallback), " ".join(str(int(i)) for i in c.image_ids)])
    bench.write_manifest(cfg, out, "reduce", [name])
    print(f"wrote reduced databases for {len(ex.queries)} queries -> {out / name}")
    return 0


def cmd_bench_reduction(args) -> int:
    cfg = _config(args)
    ex = bench.Experiment.prepare(cfg)
    out = _out_dir(cfg.out)
    outputs = []
    for mode in bench.figure_modes(len(cfg.indices), cfg.mode):
        rep = bench.run_reduction_experiment(cfg, mode, experiment=ex)
        name = bench.mode_filename("reduction", rep.channel_mode)
        bench.write_reduction_csv(rep, out / name)
        outputs.append(name)
        print(f"{rep.channel_mode:>10}: all remaining {rep.overall[0]:6.2f}%  "
              f"relevant remaining {rep.overall[1]:6.2f}%")
    bench.write_manifest(cfg, out, "bench-reduction", outputs)
    return 0


def cmd_bench_time(args) -> int:
    cfg = _config(args)
    ex = bench.Experiment.prepare(cfg)
    out = _out_dir(cfg.out)
    rep = bench.run_timing_experiment(cfg, experiment=ex)
    bench.write_timing_csv(rep, out / "timing.csv")
    bench.write_manifest(cfg, out, "bench-time", ["timing.csv"])
    print(f"median ranking time per query: full {rep.median_full_s * 1e6:.1f} us, "
          f"reduced {rep.median_reduced_s * 1e6:.1f} us (survivors {rep.mean_survivor_fraction:.1%}), "
          f"filter {rep.median_filter_s * 1e6:.1f} us")
    return 0


def cmd_bench_precision(args) -> int:
    cfg = _config(args)
    ex = bench.Experiment.prepare(cfg)
    out = _out_dir(cfg.out)
    cmp = bench.run_precision_experiment(cfg, experiment=ex, prune=not args.no_prune)
    bench.write_precision_csv(cmp, out / "precision.csv")
    bench.write_rankings_csv(cmp.rankings_full, out / "rankings_full.csv")
    bench.write_rankings_csv(cmp.rankings_reduced, out / "rankings_reduced.csv")
    bench.write_manifest(cfg, out, "bench-precision",
                         ["precision.csv", "rankings_full.csv", "rankings_reduced.csv"])
    print(f"mean precision@{cfg.k}: full {cmp.full.mean_precision:.2%}, "
          f"reduced {cmp.reduced.mean_precision:.2%}")
    return 0


COMMANDS = {
    "extract": cmd_extract,
    "build-index": cmd_build_index,
    "query": cmd_query,
    "reduce": cmd_reduce,
    "bench-reduction": cmd_bench_reduction,
    "bench-time": cmd_bench_time,
    "bench-precision": cmd_bench_precision,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CorpusError, IndexBuildError, IndexFormatError, bench.ConfigError, ValueError, OSError) as exc:
        print(f"zmprune {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
