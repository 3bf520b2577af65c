"""Offline per-category interval index.

For every feature channel and category the index keeps the interval
``[a, b]`` spanned by the category's indexed images, its center and
radius, and the largest radius over all categories (``r_max``).  It also
keeps the raw feature rows so the ranking stage never re-extracts.

File format
-----------
A single UTF-8 JSON document::

    {"format": "zmprune-index", "version": 1,
     "checksum": "<sha256 hex of the canonical payload>",
     "payload": {...}}

All floats in the payload are written with :meth:`float.hex` so a
round-trip is bit-exact.  The payload holds ``split_seed``,
``indexed_set``, ``indices`` (list of ``[p, q]``), ``channels`` (per
channel: ``stats`` as ``[category_id, a, b, c, r]`` rows and ``r_max``)
and the feature table (``ids``, ``categories``, ``values`` row-major).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from zmprune.dataset import Corpus, Split
from zmprune.features import FeatureTable, extract_table
from zmprune.zernike import MomentIndex

FORMAT_NAME = "zmprune-index"
FORMAT_VERSION = 1


class IndexBuildError(ValueError):
    """The corpus/split cannot produce a valid index."""


class IndexFormatError(Exception):
    """An index file is corrupt, truncated or of an unknown version."""


@dataclass(frozen=True)
class CategoryStats:
    category_id: int
    a: float
    b: float
    c: float
    r: float

    def __post_init__(self):
        if not self.a <= self.b:
            raise ValueError(f"category {self.category_id}: a={self.a} > b={self.b}")


def build_category_stats(values, category_id: int = 1) -> CategoryStats:
    """Interval ``[min, max]`` of ``values`` with its center and radius."""
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise ValueError(f"category {category_id}: no values")
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"category {category_id}: non-finite feature value")
    a = float(vals.min())
    b = float(vals.max())
    return CategoryStats(int(category_id), a, b, (a + b) / 2, (b - a) / 2)


@dataclass(frozen=True)
class FeatureChannelIndex:
    feature_index: MomentIndex
    stats: tuple[CategoryStats, ...]
    r_max: float

    @classmethod
    def from_stats(cls, feature_index: MomentIndex, stats: Sequence[CategoryStats]) -> "FeatureChannelIndex":
        stats = tuple(sorted(stats, key=lambda s: s.category_id))
        if not stats:
            raise IndexBuildError("a channel needs at least one category")
        return cls(feature_index, stats, max(s.r for s in stats))

    @property
    def category_ids(self) -> tuple[int, ...]:
        return tuple(s.category_id for s in self.stats)

    def stats_for(self, category_id: int) -> CategoryStats:
        for s in self.stats:
            if s.category_id == category_id:
                return s
        raise KeyError(category_id)


@dataclass(frozen=True, eq=False)
class PrefilterIndex:
    """Everything the online phase needs: intervals plus stored features."""

    channels: tuple[FeatureChannelIndex, ...]
    features: FeatureTable
    split_seed: int
    indexed_set: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        cover = {ch.category_ids for ch in self.channels}
        if len(cover) > 1:
            raise IndexBuildError("channels cover different categories")
        if tuple(ch.feature_index for ch in self.channels) != self.features.indices:
            raise IndexBuildError("channel order does not match the feature table")

    @property
    def indices(self) -> tuple[MomentIndex, ...]:
        return self.features.indices

    @property
    def category_ids(self) -> tuple[int, ...]:
        return self.channels[0].category_ids

    def __len__(self):
        return len(self.features)

    def __eq__(self, other):
        if not isinstance(other, PrefilterIndex):
            return NotImplemented
        return (self.channels == other.channels and self.features == other.features
                and self.split_seed == other.split_seed and self.indexed_set == other.indexed_set)

    __hash__ = None

    # Channel-major arrays for the vectorized filter: shape (n_channels, n_categories).
    @cached_property
    def lows(self) -> np.ndarray:
        return np.array([[s.a for s in ch.stats] for ch in self.channels])

    @cached_property
    def highs(self) -> np.ndarray:
        return np.array([[s.b for s in ch.stats] for ch in self.channels])

    @cached_property
    def centers(self) -> np.ndarray:
        return np.array([[s.c for s in ch.stats] for ch in self.channels])

    @cached_property
    def r_max(self) -> np.ndarray:
        return np.array([ch.r_max for ch in self.channels])

    @cached_property
    def values_by_channel(self) -> np.ndarray:
        """Feature table transposed to ``(n_channels, n_indexed)``, contiguous."""
        return np.ascontiguousarray(self.features.values.T)

    @cached_property
    def category_counts(self) -> dict[int, int]:
        cats, counts = np.unique(self.features.categories, return_counts=True)
        return {int(c): int(n) for c, n in zip(cats, counts)}


def build_index_from_table(table: FeatureTable, split_seed: int = 0, indexed_set: str = "train",
                           check: bool = True) -> PrefilterIndex:
    """Compute category intervals and ``r_max`` for every channel of ``table``."""
    if len(table) == 0:
        raise IndexBuildError("no images to index")
    cats = table.category_ids()
    if cats != list(range(1, len(cats) + 1)):
        raise IndexBuildError(f"indexed images cover categories {cats}; every category 1..N "
                              "needs at least one indexed image")
    channels = []
    for j, ix in enumerate(table.indices):
        col = table.values[:, j]
        stats = [build_category_stats(col[table.categories == c], c) for c in cats]
        channels.append(FeatureChannelIndex.from_stats(ix, stats))
    index = PrefilterIndex(tuple(channels), table, int(split_seed), indexed_set)
    if check:
        _check_containment(index)
    return index


def _check_containment(index: PrefilterIndex) -> None:
    cat_pos = index.features.categories - 1
    v = index.features.values
    lo = index.lows.T[cat_pos]
    hi = index.highs.T[cat_pos]
    if not np.all((v >= lo) & (v <= hi)):
        raise AssertionError("indexed feature outside its category interval")


def build_index(corpus: Corpus, split: Split, indices: Sequence[MomentIndex],
                indexed_set: str = "train", workers: int = 1) -> PrefilterIndex:
    """Extract features for the indexed images and build the index.

    ``indexed_set`` is ``"train"`` (default) or ``"all"``.
    """
    if indexed_set == "train":
        ids = split.train_ids
    elif indexed_set == "all":
        ids = corpus.image_ids
    else:
        raise ValueError(f"indexed_set must be 'train' or 'all', not {indexed_set!r}")
    empty = [c.id for c in corpus.categories if not set(c.image_ids) & set(ids)]
    if empty:
        raise IndexBuildError(f"categories {empty} have no {indexed_set} images")
    table = extract_table(corpus, sorted(ids), indices, workers=workers)
    return build_index_from_table(table, split.seed, indexed_set)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

def _hex(x) -> str:
    return float(x).hex()


def _unhex(s: str) -> float:
    return float.fromhex(s)


def _payload(index: PrefilterIndex) -> dict:
    t = index.features
    return {
        "split_seed": index.split_seed,
        "indexed_set": index.indexed_set,
        "indices": [[ix.p, ix.q] for ix in index.indices],
        "channels": [
            {"stats": [[s.category_id, _hex(s.a), _hex(s.b), _hex(s.c), _hex(s.r)] for s in ch.stats],
             "r_max": _hex(ch.r_max)}
            for ch in index.channels
        ],
        "features": {
            "ids": [int(i) for i in t.ids],
            "categories": [int(c) for c in t.categories],
            "values": [_hex(v) for v in t.values.ravel()],
        },
    }


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("ascii")


def dumps_index(index: PrefilterIndex) -> bytes:
    payload = _payload(index)
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "checksum": hashlib.sha256(_canonical(payload)).hexdigest(),
        "payload": payload,
    }
    return _canonical(doc) + b"\n"


def loads_index(data: bytes) -> PrefilterIndex:
    try:
        doc = json.loads(data.decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IndexFormatError(f"index is not valid JSON (truncated?): {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise IndexFormatError("not a zmprune index file")
    if doc.get("version") != FORMAT_VERSION:
        raise IndexFormatError(f"unsupported index version {doc.get('version')!r}, "
                               f"expected {FORMAT_VERSION}")
    payload = doc.get("payload")
    if hashlib.sha256(_canonical(payload)).hexdigest() != doc.get("checksum"):
        raise IndexFormatError("index checksum mismatch")
    try:
        indices = tuple(MomentIndex(p, q) for p, q in payload["indices"])
        f = payload["features"]
        values = np.array([_unhex(v) for v in f["values"]], dtype=np.float64)
        table = FeatureTable(indices, np.array(f["ids"], dtype=np.int64),
                             np.array(f["categories"], dtype=np.int64),
                             values.reshape(len(f["ids"]), len(indices)))
        channels = []
        for ix, ch in zip(indices, payload["channels"], strict=True):
            stats = tuple(CategoryStats(int(c), _unhex(a), _unhex(b), _unhex(cc), _unhex(r))
                          for c, a, b, cc, r in ch["stats"])
            channels.append(FeatureChannelIndex(ix, stats, _unhex(ch["r_max"])))
        return PrefilterIndex(tuple(channels), table, int(payload["split_seed"]), payload["indexed_set"])
    except (KeyError, TypeError, ValueError) as exc:
        raise IndexFormatError(f"malformed index payload: {exc}") from exc


def save_index(index: PrefilterIndex, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps_index(index))
    tmp.replace(path)


def load_index(path) -> PrefilterIndex:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IndexFormatError(f"cannot read index {path}: {exc}") from exc
    return loads_index(data)


def write_stats_csv(index: PrefilterIndex, path) -> None:
    """Per-channel category intervals plus ``r_max``, one row per category."""
    lines = ["feature,category_id,a,b,center,radius,r_max"]
    for ch in index.channels:
        for s in ch.stats:
            lines.append(f"{ch.feature_index.label},{s.category_id},{s.a!r},{s.b!r},{s.c!r},{s.r!r},{ch.r_max!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

