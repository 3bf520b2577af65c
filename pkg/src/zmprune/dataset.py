"""Category-structured image corpora, grayscale conversion and splits.

Two on-disk layouts are understood:

``corel``
    A flat directory of ``<k>.<ext>`` files, ``k = 0 .. n-1``.  Image ``k``
    belongs to category ``k // per_category + 1`` (``per_category`` is 100
    for Corel-1k).  The image id is ``k``.
``folders``
    One sub-directory per category.  Categories are ordered by directory
    name, images within a category by file name, and ids are assigned
    ``1 .. n`` in that order.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = frozenset({".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".gif", ".ppm", ".pgm"})
# per-mille so that the weights sum to exactly 1000
LUMA_WEIGHTS = (299, 587, 114)


class CorpusError(Exception):
    """Raised for missing, malformed or unreadable corpora."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Grayscale raster, intensities in ``[0, 1]``, shape ``(height, width)``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or 0 in px.shape:
            raise ValueError(f"gray image needs a nonempty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("gray intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None


def to_gray(raw) -> GrayImage:
    """Convert a decoded raster to a :class:`GrayImage`.

    ``raw`` is a PIL image or an array of shape ``(h, w)`` (luma),
    ``(h, w, 3)`` (RGB) or ``(h, w, 4)`` (RGBA, alpha ignored).  Integer
    arrays are scaled by their dtype maximum; float arrays must already be
    in ``[0, 1]``.  Color uses ``0.299 R + 0.587 G + 0.114 B``.
    """
    if isinstance(raw, Image.Image):
        if raw.mode not in ("L", "RGB", "RGBA", "I;16", "I"):
            raw = raw.convert("RGB")
        raw = np.asarray(raw)
    arr = np.asarray(raw)
    if arr.ndim not in (2, 3) or 0 in arr.shape[:2]:
        raise ValueError(f"cannot convert raster of shape {arr.shape} to gray")
    if np.issubdtype(arr.dtype, np.integer):
        scale = float(np.iinfo(arr.dtype).max)
        if arr.dtype == np.int32 and arr.max(initial=0) <= 65535:
            scale = 65535.0  # PIL mode "I" holding 16-bit data
        arr = arr.astype(np.float64) / scale
    else:
        arr = arr.astype(np.float64)
    if arr.ndim == 3:
        if arr.shape[2] not in (3, 4):
            raise ValueError(f"expected 3 or 4 channels, got {arr.shape[2]}")
        r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
        arr = (LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b) / 1000.0
    return GrayImage(arr)


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    image_ids: tuple[int, ...]


@dataclass(frozen=True)
class Corpus:
    """Ordered categories plus the file backing every image id."""

    root: Path
    layout: str
    categories: tuple[Category, ...]
    paths: dict = field(compare=True, repr=False)

    def __post_init__(self):
        ids = [c.id for c in self.categories]
        if ids != list(range(1, len(ids) + 1)):
            raise CorpusError(f"category ids must be contiguous 1..N, got {ids}")
        seen = set()
        for c in self.categories:
            if not c.image_ids:
                raise CorpusError(f"category {c.id} ({c.name}) is empty")
            for i in c.image_ids:
                if i in seen:
                    raise CorpusError(f"duplicate image id {i}")
                seen.add(i)
        object.__setattr__(self, "_category_of", {i: c.id for c in self.categories for i in c.image_ids})

    @property
    def image_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self._category_of))

    def __len__(self):
        return len(self._category_of)

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def category_of(self, image_id: int) -> int:
        return self._category_of[int(image_id)]

    def load_image(self, image_id: int) -> GrayImage:
        return load_image(self.paths[int(image_id)])


def load_image(path) -> GrayImage:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            return to_gray(im)
    except (OSError, ValueError) as exc:
        raise CorpusError(f"cannot read image {path}: {exc}") from exc


def _is_image(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS


def _check_readable(path: Path) -> None:
    try:
        with Image.open(path) as im:
            im.verify()
    except Exception as exc:  # PIL raises a zoo of exception types on corrupt data
        raise CorpusError(f"unreadable image {path}: {exc}") from exc


def detect_layout(root: Path) -> str:
    entries = list(root.iterdir())
    if any(e.is_dir() for e in entries):
        return "folders"
    if any(_is_image(e) and e.stem.isdigit() for e in entries):
        return "corel"
    raise CorpusError(f"cannot detect corpus layout under {root}")


def load_corpus(root, layout: str = "auto", per_category: int = 100, verify: bool = True) -> Corpus:
    """Scan ``root`` and build a :class:`Corpus`.

    Ordering depends only on file names, never on directory enumeration
    order.  With ``verify`` every file is opened once so corrupt images are
    reported up front, with their path.
    """
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus directory not found: {root}")
    if layout == "auto":
        layout = detect_layout(root)

    if layout == "corel":
        files = {}
        for e in root.iterdir():
            if _is_image(e) and e.stem.isdigit():
                k = int(e.stem)
                if k in files:
                    raise CorpusError(f"duplicate image number {k}: {files[k].name}, {e.name}")
                files[k] = e
        if not files:
            raise CorpusError(f"no numbered images in {root}")
        if per_category < 1:
            raise CorpusError("per_category must be positive")
        by_cat: dict[int, list[int]] = {}
        for k in sorted(files):
            by_cat.setdefault(k // per_category + 1, []).append(k)
        n = max(by_cat)
        missing = [c for c in range(1, n + 1) if c not in by_cat]
        if missing:
            raise CorpusError(f"empty categories {missing} in {root}")
        categories = tuple(Category(c, str(c), tuple(by_cat[c])) for c in range(1, n + 1))
        paths = dict(files)
    elif layout == "folders":
        dirs = sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: d.name)
        if not dirs:
            raise CorpusError(f"no category folders in {root}")
        categories = []
        paths = {}
        next_id = 1
        for cid, d in enumerate(dirs, start=1):
            files = sorted((f for f in d.iterdir() if _is_image(f)), key=lambda f: f.name)
            if not files:
                raise CorpusError(f"category folder {d} contains no images")
            ids = tuple(range(next_id, next_id + len(files)))
            next_id += len(files)
            paths.update(zip(ids, files))
            categories.append(Category(cid, d.name, ids))
        categories = tuple(categories)
    else:
        raise CorpusError(f"unknown layout {layout!r}; expected 'corel', 'folders' or 'auto'")

    if verify:
        for i in sorted(paths):
            _check_readable(paths[i])
    return Corpus(root, layout, categories, paths)


@dataclass(frozen=True)
class Split:
    """Stratified train/test partition of a corpus."""

    train_ids: frozenset
    test_ids: frozenset
    seed: int
    flagged_categories: tuple[int, ...] = ()

    def __post_init__(self):
        if self.train_ids & self.test_ids:
            raise ValueError("train and test sets overlap")

    def train_sorted(self) -> list[int]:
        return sorted(self.train_ids)

    def test_sorted(self) -> list[int]:
        return sorted(self.test_ids)


def split(corpus: Corpus, seed: int = 0) -> Split:
    """Per-category 50/50 split: ``ceil(M/2)`` train, ``floor(M/2)`` test.

    Each category is shuffled by its own generator seeded with
    ``(seed, category_id)``, so the split of one category does not depend
    on the others.
    """
    train, test, flagged = [], [], []
    for cat in corpus.categories:
        ids = np.array(cat.image_ids)
        rng = np.random.default_rng([int(seed), cat.id])
        order = rng.permutation(len(ids))
        n_train = math.ceil(len(ids) / 2)
        train.extend(int(i) for i in ids[order[:n_train]])
        test.extend(int(i) for i in ids[order[n_train:]])
        if len(ids) < 2:
            flagged.append(cat.id)
    if flagged:
        log.warning("categories %s have fewer than 2 images; their test half is empty", flagged)
    return Split(frozenset(train), frozenset(test), int(seed), tuple(flagged))


# --------------------------------------------------------------------------
# Synthetic corpora (fixtures, benchmarks without Corel-1k)
# --------------------------------------------------------------------------

def synthetic_image(category: int, rng: np.random.Generator, size: int = 48,
                    n_categories: int = 10, jitter: float = 1.0) -> np.ndarray:
    """8-bit raster whose moment magnitudes depend on ``category``.

    A bright centered disk over a dimmer background; disk radius, disk
    brightness and background level vary with category, plus random
    perturbation scaled by ``jitter`` so category feature ranges overlap.
    """
    t = (category - 1) / max(n_categories - 1, 1)
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2
    r = np.hypot(xx - c, yy - c) / (size / 2)
    radius = 0.25 + 0.6 * t + jitter * rng.uniform(-0.12, 0.12)
    fg = 0.9 - 0.5 * ((category * 3) % n_categories) / n_categories + jitter * rng.uniform(-0.08, 0.08)
    bg = 0.1 + 0.3 * ((category * 7) % n_categories) / n_categories + jitter * rng.uniform(-0.05, 0.05)
    img = np.where(r <= radius, fg, bg)
    # elongation along x breaks rotational symmetry so |A22| carries signal
    stretch = 0.5 * t * np.cos(2 * np.arctan2(yy - c, xx - c)) * np.exp(-r ** 2)
    img = img + stretch + jitter * rng.normal(0.0, 0.03, size=img.shape)
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def write_synthetic_corpus(root, n_categories: int = 10, per_category: int = 20, size: int = 48,
                           seed: int = 0, layout: str = "folders", jitter: float = 1.0) -> Path:
    """Write a deterministic synthetic corpus of PNG files under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    k = 0
    for cat in range(1, n_categories + 1):
        if layout == "folders":
            (root / f"cat{cat:02d}").mkdir(exist_ok=True)
        for j in range(per_category):
            arr = synthetic_image(cat, rng, size=size, n_categories=n_categories, jitter=jitter)
            if layout == "folders":
                path = root / f"cat{cat:02d}" / f"img{j:04d}.png"
            elif layout == "corel":
                path = root / f"{k}.png"
            else:
                raise ValueError(f"unknown layout {layout!r}")
            Image.fromarray(arr, mode="L").save(path)
            k += 1
    return root


def iter_images(corpus: Corpus, ids: Iterable[int]):
    for i in ids:
        yield i, corpus.load_image(i)


def default_workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))
