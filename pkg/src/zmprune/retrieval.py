"""Euclidean nearest-neighbor ranking over a candidate set, and precision."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from zmprune.index import PrefilterIndex
from zmprune.prefilter import CandidateSet, full_candidates
from zmprune.zernike import FeatureVector

DEFAULT_K = 20


def distance(u: FeatureVector, v: FeatureVector) -> float:
    if u.indices != v.indices:
        raise ValueError("feature vectors use different moment indices")
    return float(np.sqrt(np.sum((u.values - v.values) ** 2)))


@dataclass(frozen=True, eq=False)
class RetrievalResult:
    ranked_ids: np.ndarray
    distances: np.ndarray
    elapsed: float  # seconds spent ranking

    def __len__(self):
        return len(self.ranked_ids)


def rank(query_values: np.ndarray, candidates: CandidateSet, index: PrefilterIndex, k: int | None):
    """Core ranking: sort candidates by (distance, id), keep the first ``k``."""
    rows = candidates.rows
    diff = index.features.values[rows] - query_values
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    order = np.lexsort((candidates.image_ids, d))
    if k is not None:
        order = order[:k]
    return candidates.image_ids[order], d[order]


def retrieve(query, candidates: CandidateSet | None, index: PrefilterIndex, k: int | None = DEFAULT_K) -> RetrievalResult:
    """Rank ``candidates`` by distance to ``query``.

    Ties are broken by the smaller image id.  ``k=None`` returns the whole
    ranking; a ``k`` larger than the candidate count is clamped.
    ``elapsed`` covers the ranking only.
    """
    if k is not None and k < 1:
        raise ValueError("k must be at least 1")
    if candidates is None:
        candidates = full_candidates(index)
    if len(candidates) == 0:
        raise ValueError("empty candidate set")
    if isinstance(query, FeatureVector):
        if query.indices != index.indices:
            raise ValueError("query features do not match the index channels")
        q = query.values
    else:
        q = np.asarray(query, dtype=np.float64)
    t0 = time.perf_counter()
    ids, d = rank(q, candidates, index, k)
    elapsed = time.perf_counter() - t0
    return RetrievalResult(ids, d, elapsed)


def precision_at_k(result: RetrievalResult, query_category: int, corpus, k: int) -> float:
    """Fraction of the top ``k`` whose category equals ``query_category``.

    ``corpus`` is anything with a ``category_of(image_id)`` method.  The
    denominator is ``k`` even when fewer than ``k`` results came back.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    hits = sum(1 for i in result.ranked_ids[:k] if corpus.category_of(int(i)) == query_category)
    return hits / k


@dataclass(frozen=True)
class PrecisionReport:
    per_category_precision: tuple[tuple[int, float], ...]
    mean_precision: float
    k: int


def precision_report(query_categories, precisions, k: int) -> PrecisionReport:
    """Average precisions per category, then take the unweighted category mean."""
    cats = np.asarray(query_categories)
    prec = np.asarray(precisions, dtype=np.float64)
    per_cat = tuple((int(c), float(prec[cats == c].mean())) for c in np.unique(cats))
    mean = float(np.mean([p for _, p in per_cat])) if per_cat else 0.0
    return PrecisionReport(per_cat, mean, k)
