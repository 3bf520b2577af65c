"""Experiment harness: database reduction, ranking time, precision.

Every experiment runs the test half of a split as queries against the
index (by default built from the train half).  Reports are plain
dataclasses; the ``write_*`` helpers turn them into CSV.
"""

from __future__ import annotations

import csv
import gc
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from zmprune import __version__
from zmprune.dataset import Corpus, Split, load_corpus, split as make_split
from zmprune.features import FeatureTable, extract_table
from zmprune.index import PrefilterIndex, build_index_from_table, load_index
from zmprune.prefilter import ALL, CandidateSet, FilterMode, filter_candidates, full_candidates
from zmprune.retrieval import DEFAULT_K, PrecisionReport, precision_report, retrieve
from zmprune.zernike import DEFAULT_INDICES, MomentIndex, format_indices

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class BenchConfig:
    corpus: Path
    layout: str = "auto"
    seed: int = 0
    indices: tuple[MomentIndex, ...] = DEFAULT_INDICES
    mode: FilterMode = ALL
    k: int = DEFAULT_K
    reps: int = 5
    out: Path | None = None
    per_category: int = 100
    indexed_set: str = "train"
    pooled: bool = False
    workers: int = 1
    index_path: Path | None = None

    def validate(self) -> "BenchConfig":
        self.corpus = Path(self.corpus)
        if not self.corpus.is_dir():
            raise ConfigError(f"corpus directory not found: {self.corpus}")
        if self.layout not in ("auto", "corel", "folders"):
            raise ConfigError(f"unknown layout {self.layout!r}")
        if isinstance(self.mode, str):
            self.mode = FilterMode.parse(self.mode)
        self.indices = tuple(self.indices)
        if not self.indices:
            raise ConfigError("no moment indices configured")
        self.mode.resolve(len(self.indices))
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.per_category < 1:
            raise ConfigError("per_category must be at least 1")
        if self.indexed_set not in ("train", "all"):
            raise ConfigError("indexed_set must be 'train' or 'all'")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.out is not None:
            self.out = Path(self.out)
        if self.index_path is not None:
            self.index_path = Path(self.index_path)
            if not self.index_path.is_file():
                raise ConfigError(f"index file not found: {self.index_path}")
        return self

    def to_dict(self) -> dict:
        return {
            "corpus": str(self.corpus),
            "layout": self.layout,
            "seed": self.seed,
            "features": format_indices(self.indices),
            "mode": self.mode.label,
            "k": self.k,
            "reps": self.reps,
            "out": None if self.out is None else str(self.out),
            "per_category": self.per_category,
            "indexed_set": self.indexed_set,
            "pooled": self.pooled,
            "workers": self.workers,
            "index": None if self.index_path is None else str(self.index_path),
        }


@dataclass
class Experiment:
    """Loaded corpus, split, index and query features for one config."""

    config: BenchConfig
    corpus: Corpus
    split: Split
    index: PrefilterIndex
    queries: FeatureTable

    @classmethod
    def prepare(cls, config: BenchConfig) -> "Experiment":
        config.validate()
        corpus = load_corpus(config.corpus, config.layout, config.per_category)
        sp = make_split(corpus, config.seed)
        if config.index_path is not None:
            index = load_index(config.index_path)
            if index.indices != config.indices:
                raise ConfigError(f"index features {format_indices(index.indices)} differ from "
                                  f"configured {format_indices(config.indices)}")
            if index.split_seed != config.seed:
                raise ConfigError(f"index was built with seed {index.split_seed}, config has {config.seed}")
            queries = extract_table(corpus, sp.test_sorted(), config.indices, workers=config.workers)
        else:
            table = extract_table(corpus, corpus.image_ids, config.indices, workers=config.workers)
            db_ids = sp.train_ids if config.indexed_set == "train" else corpus.image_ids
            index = build_index_from_table(table.subset(db_ids), sp.seed, config.indexed_set)
            queries = table.subset(sp.test_ids)
        if len(queries) == 0:
            raise ConfigError("the test half is empty; nothing to query")
        return cls(config, corpus, sp, index, queries)


def _experiment(config, experiment):
    return experiment if experiment is not None else Experiment.prepare(config)


# --------------------------------------------------------------------------
# Reduction
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CategoryReduction:
    category_id: int
    queries: int
    pct_all: float
    pct_relevant: float
    fallbacks: int


@dataclass(frozen=True)
class ReductionReport:
    channel_mode: str
    per_category: tuple[CategoryReduction, ...]
    overall: tuple[float, float]  # (pct_all, pct_relevant)
    pooled: bool = False
    per_query_pct_all: np.ndarray = field(default=None, repr=False, compare=False)
    per_query_pct_relevant: np.ndarray = field(default=None, repr=False, compare=False)


def reduction_stats(index: PrefilterIndex, query_ids, query_categories, candidate_sets: Sequence[CandidateSet],
                    mode_label: str = "all", pooled: bool = False) -> ReductionReport:
    """Remaining percentages of the database and of the query's category.

    Per query: ``|candidates| / |db| * 100`` and ``|candidates in query
    category| / |db images of that category| * 100``.  Per-query values
    are averaged per query category and overall; with ``pooled`` the
    counts are summed before dividing instead.
    """
    n_db = len(index)
    counts = index.category_counts
    db_cats = index.features.categories
    cats = np.asarray(query_categories, dtype=np.int64)
    kept = np.array([len(c) for c in candidate_sets], dtype=np.float64)
    kept_rel = np.array([np.count_nonzero(db_cats[c.rows] == q) for c, q in zip(candidate_sets, cats)],
                        dtype=np.float64)
    rel_den = np.array([counts.get(int(q), 0) for q in cats], dtype=np.float64)
    if np.any(rel_den == 0):
        raise ValueError("a query category has no indexed images")
    fallback = np.array([c.fallback for c in candidate_sets])
    pct_all = kept / n_db * 100.0
    pct_rel = kept_rel / rel_den * 100.0

    def summarize(sel):
        if pooled:
            return (float(kept[sel].sum() / (n_db * sel.sum()) * 100.0),
                    float(kept_rel[sel].sum() / rel_den[sel].sum() * 100.0))
        return float(pct_all[sel].mean()), float(pct_rel[sel].mean())

    per_cat = []
    for c in np.unique(cats):
        sel = cats == c
        a, r = summarize(sel)
        per_cat.append(CategoryReduction(int(c), int(sel.sum()), a, r, int(fallback[sel].sum())))
    overall = summarize(np.ones(len(cats), dtype=bool))
    return ReductionReport(mode_label, tuple(per_cat), overall, pooled, pct_all, pct_rel)


def run_reduction_experiment(config: BenchConfig, mode: FilterMode | str | None = None,
                             experiment: Experiment | None = None) -> ReductionReport:
    ex = _experiment(config, experiment)
    mode = ex.config.mode if mode is None else mode
    if isinstance(mode, str):
        mode = FilterMode.parse(mode)
    q = ex.queries
    cands = [filter_candidates(v, ex.index, mode) for v in q.values]
    return reduction_stats(ex.index, q.ids, q.categories, cands, mode.label, ex.config.pooled)


def figure_modes(n_channels: int, extra: FilterMode | None = None) -> list[FilterMode]:
    """One single-channel mode per feature plus all-features, optionally one more."""
    modes = [FilterMode((i,)) for i in range(n_channels)] + [ALL]
    if extra is not None and extra not in modes:
        modes.append(extra)
    return modes


# --------------------------------------------------------------------------
# Timing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TimingReport:
    channel_mode: str
    queries: int
    reps: int
    k: int
    median_full_s: float
    median_reduced_s: float
    median_filter_s: float
    total_full_s: float
    total_reduced_s: float
    total_filter_s: float
    mean_survivor_fraction: float

    @property
    def speedup(self) -> float:
        return self.median_full_s / self.median_reduced_s if self.median_reduced_s > 0 else float("inf")


def run_timing_experiment(config: BenchConfig, experiment: Experiment | None = None) -> TimingReport:
    """Time ranking over the full and the reduced database for every query.

    Each query is repeated ``reps`` times; its time is the median over
    repetitions.  The report carries the median over queries and the
    summed per-query medians.  Runs single-threaded with the garbage
    collector paused.
    """
    ex = _experiment(config, experiment)
    cfg = ex.config
    q = ex.queries
    index = ex.index
    full = full_candidates(index)
    n = len(q)
    t_full = np.empty((cfg.reps, n))
    t_red = np.empty((cfg.reps, n))
    t_filter = np.empty((cfg.reps, n))
    fractions = np.empty(n)
    # warm caches so the first query is not penalized
    warm = filter_candidates(q.values[0], index, cfg.mode)
    retrieve(q.values[0], warm, index, cfg.k)
    retrieve(q.values[0], full, index, cfg.k)
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for rep in range(cfg.reps):
            for j, v in enumerate(q.values):
                t0 = time.perf_counter()
                cands = filter_candidates(v, index, cfg.mode)
                t_filter[rep, j] = time.perf_counter() - t0
                t_red[rep, j] = retrieve(v, cands, index, cfg.k).elapsed
                t_full[rep, j] = retrieve(v, full, index, cfg.k).elapsed
                fractions[j] = len(cands) / len(index)
    finally:
        if gc_was_enabled:
            gc.enable()
    per_q_full = np.median(t_full, axis=0)
    per_q_red = np.median(t_red, axis=0)
    per_q_filter = np.median(t_filter, axis=0)
    return TimingReport(
        cfg.mode.label, n, cfg.reps, cfg.k,
        float(np.median(per_q_full)), float(np.median(per_q_red)), float(np.median(per_q_filter)),
        float(per_q_full.sum()), float(per_q_red.sum()), float(per_q_filter.sum()),
        float(fractions.mean()),
    )


# --------------------------------------------------------------------------
# Precision
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PrecisionComparison:
    full: PrecisionReport
    reduced: PrecisionReport
    rankings_full: tuple = field(default=(), repr=False, compare=False)
    rankings_reduced: tuple = field(default=(), repr=False, compare=False)

    @property
    def difference(self) -> float:
        """``full - reduced`` mean precision, as a fraction."""
        return self.full.mean_precision - self.reduced.mean_precision


def run_precision_experiment(config: BenchConfig, experiment: Experiment | None = None,
                             prune: bool = True) -> PrecisionComparison:
    """Precision at ``k`` over the full and the reduced database.

    With ``prune=False`` the "reduced" side ranks the full database too,
    which must reproduce the full report exactly.
    """
    ex = _experiment(config, experiment)
    cfg = ex.config
    q = ex.queries
    index = ex.index
    full = full_candidates(index)
    prec_full, prec_red = [], []
    ranks_full, ranks_red = [], []
    for qid, cat, v in zip(q.ids, q.categories, q.values):
        cands = filter_candidates(v, index, cfg.mode) if prune else full
        rf = retrieve(v, full, index, cfg.k)
        rr = retrieve(v, cands, index, cfg.k)
        prec_full.append(_precision(rf.ranked_ids, cat, index, cfg.k))
        prec_red.append(_precision(rr.ranked_ids, cat, index, cfg.k))
        ranks_full.append((int(qid), rf))
        ranks_red.append((int(qid), rr))
    return PrecisionComparison(
        precision_report(q.categories, prec_full, cfg.k),
        precision_report(q.categories, prec_red, cfg.k),
        tuple(ranks_full), tuple(ranks_red),
    )


def _precision(ranked_ids, category, index: PrefilterIndex, k: int) -> float:
    rows = index.features.rows_of(ranked_ids[:k])
    return np.count_nonzero(index.features.categories[rows] == category) / k


# --------------------------------------------------------------------------
# Report writers
# --------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def mode_filename(prefix: str, mode_label: str) -> str:
    return f"{prefix}_{mode_label.replace(':', '-').replace('+', '_')}.csv"


def write_reduction_csv(report: ReductionReport, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel_mode", "category_id", "queries", "pct_all_remaining",
                    "pct_relevant_remaining", "fallbacks"])
        for c in report.per_category:
            w.writerow([report.channel_mode, c.category_id, c.queries, _fmt(c.pct_all),
                        _fmt(c.pct_relevant), c.fallbacks])
        w.writerow([report.channel_mode, "overall", sum(c.queries for c in report.per_category),
                    _fmt(report.overall[0]), _fmt(report.overall[1]),
                    sum(c.fallbacks for c in report.per_category)])


def write_timing_csv(report: TimingReport, path) -> None:
    rows = [
        ("full", report.median_full_s, report.total_full_s, 1.0),
        ("reduced", report.median_reduced_s, report.total_reduced_s, report.mean_survivor_fraction),
        ("filter_overhead", report.median_filter_s, report.total_filter_s, ""),
        ("reduced_plus_filter", report.median_reduced_s + report.median_filter_s,
         report.total_reduced_s + report.total_filter_s, ""),
    ]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel_mode", "stage", "queries", "reps", "k", "median_per_query_s",
                    "total_s", "mean_survivor_fraction"])
        for stage, med, tot, frac in rows:
            w.writerow([report.channel_mode, stage, report.queries, report.reps, report.k,
                        f"{med:.9f}", f"{tot:.9f}", frac if frac == "" else _fmt(frac)])


def write_precision_csv(cmp: PrecisionComparison, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category_id", "k", "precision_full", "precision_reduced", "difference"])
        reduced = dict(cmp.reduced.per_category_precision)
        for cat, pf in cmp.full.per_category_precision:
            pr = reduced[cat]
            w.writerow([cat, cmp.full.k, _fmt(pf), _fmt(pr), _fmt(pf - pr)])
        w.writerow(["mean", cmp.full.k, _fmt(cmp.full.mean_precision), _fmt(cmp.reduced.mean_precision),
                    _fmt(cmp.difference)])


def write_rankings_csv(rankings, path) -> None:
    """``query_id, rank, image_id, distance`` with 1-based ranks."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "rank", "image_id", "distance"])
        for qid, res in rankings:
            for r, (i, d) in enumerate(zip(res.ranked_ids, res.distances), start=1):
                w.writerow([qid, r, int(i), repr(float(d))])


def write_manifest(config: BenchConfig | dict, out_dir, command: str, outputs: Sequence[str] = ()) -> Path:
    cfg = config.to_dict() if isinstance(config, BenchConfig) else dict(config)
    doc = {"tool": "zmprune", "version": __version__, "command": command, "config": cfg,
           "outputs": sorted(outputs)}
    path = Path(out_dir) / f"manifest-{command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
