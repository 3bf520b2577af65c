"""Per-image feature tables and corpus-wide extraction."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from zmprune.dataset import Corpus, load_image
from zmprune.zernike import FeatureVector, MomentIndex, extract_features


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Feature rows for a set of images, sorted by image id.

    ``values[i, j]`` is feature ``indices[j]`` of image ``ids[i]``.
    """

    indices: tuple[MomentIndex, ...]
    ids: np.ndarray
    categories: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        cats = np.asarray(self.categories, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64).reshape(len(ids), len(self.indices))
        order = np.argsort(ids, kind="stable")
        ids, cats, values = ids[order], cats[order], values[order]
        if len(np.unique(ids)) != len(ids):
            raise ValueError("duplicate image ids in feature table")
        if cats.shape != ids.shape:
            raise ValueError("categories and ids differ in length")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite feature value")
        for a in (ids, cats, values):
            a.setflags(write=False)
        object.__setattr__(self, "indices", tuple(self.indices))
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, FeatureTable):
            return NotImplemented
        return (self.indices == other.indices
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.categories, other.categories)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    def rows_of(self, image_ids) -> np.ndarray:
        image_ids = np.asarray(image_ids, dtype=np.int64)
        pos = np.searchsorted(self.ids, image_ids)
        if np.any(pos >= len(self.ids)) or np.any(self.ids[np.minimum(pos, len(self.ids) - 1)] != image_ids):
            raise KeyError("image id not in feature table")
        return pos

    def vector(self, image_id: int) -> FeatureVector:
        return FeatureVector(self.indices, self.values[self.rows_of([image_id])[0]])

    def category_of(self, image_id: int) -> int:
        return int(self.categories[self.rows_of([image_id])[0]])

    def subset(self, image_ids) -> "FeatureTable":
        rows = self.rows_of(sorted(image_ids))
        return FeatureTable(self.indices, self.ids[rows], self.categories[rows], self.values[rows])

    def category_ids(self) -> list[int]:
        return [int(c) for c in np.unique(self.categories)]


def _extract_one(args):
    path, indices = args
    return extract_features(load_image(path), indices).values


def extract_table(corpus: Corpus, image_ids: Sequence[int], indices: Sequence[MomentIndex],
                  workers: int = 1) -> FeatureTable:
    """Extract features for ``image_ids``; rows come back ordered by id."""
    ids = sorted(int(i) for i in image_ids)
    indices = tuple(indices)
    jobs = [(corpus.paths[i], indices) for i in ids]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_extract_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        rows = [_extract_one(j) for j in jobs]
    values = np.array(rows, dtype=np.float64).reshape(len(ids), len(indices))
    cats = [corpus.category_of(i) for i in ids]
    return FeatureTable(indices, np.array(ids, dtype=np.int64), np.array(cats, dtype=np.int64), values)


def write_table_csv(table: FeatureTable, path) -> None:
    """``image_id, category_id, f_1 .. f_k`` with ``f_j`` = ``indices[j-1]``."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "category_id"] + [f"f_{j + 1}" for j in range(len(table.indices))])
        for i, c, row in zip(table.ids, table.categories, table.values):
            w.writerow([int(i), int(c)] + [repr(float(v)) for v in row])


def read_table_csv(path, indices: Sequence[MomentIndex]) -> FeatureTable:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != 2 + len(indices):
            raise ValueError(f"{path}: expected {len(indices)} feature columns, found {len(header) - 2}")
        ids, cats, rows = [], [], []
        for rec in reader:
            ids.append(int(rec[0]))
            cats.append(int(rec[1]))
            rows.append([float(v) for v in rec[2:]])
    return FeatureTable(tuple(indices), np.array(ids), np.array(cats),
                        np.array(rows).reshape(len(ids), len(indices)))
