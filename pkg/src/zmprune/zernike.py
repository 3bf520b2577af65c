"""Pseudo-Zernike moments of grayscale rasters on the unit disk.

The raster is mapped so that its inscribed disk becomes the unit disk;
pixels whose centers fall outside it are ignored.  Moments are
integrated with the midpoint rule (one sample per pixel center, uniform
pixel area).

Indexing follows the usual pseudo-Zernike convention: ``p`` is the
order, ``q`` the repetition, ``|q| <= p``, and the repetition drives the
angular factor ``exp(i q theta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from zmprune.dataset import GrayImage

#: Orders above this overflow float64 coefficient sums or lose all accuracy.
MAX_ORDER = 20


@dataclass(frozen=True, order=True)
class MomentIndex:
    """Order/repetition pair ``(p, q)`` with ``|q| <= p``."""

    p: int
    q: int

    def __post_init__(self):
        if not isinstance(self.p, (int, np.integer)) or not isinstance(self.q, (int, np.integer)):
            raise TypeError(f"moment index must be integers, got ({self.p!r}, {self.q!r})")
        if self.p < 0 or abs(self.q) > self.p:
            raise ValueError(f"invalid moment index (p={self.p}, q={self.q}): need |q| <= p")
        if self.p > MAX_ORDER:
            raise ValueError(f"order {self.p} exceeds supported maximum {MAX_ORDER}")

    def __str__(self):
        return f"{self.p},{self.q}"

    @property
    def label(self) -> str:
        return f"A{self.p}{self.q}" if self.q >= 0 else f"A{self.p}m{-self.q}"


DEFAULT_INDICES = (MomentIndex(0, 0), MomentIndex(2, 0), MomentIndex(2, 2))


def parse_indices(text: str) -> tuple[MomentIndex, ...]:
    """Parse ``"p,q;p,q;..."`` into moment indices.

    >>> parse_indices("0,0;2,0;2,2")
    (MomentIndex(p=0, q=0), MomentIndex(p=2, q=0), MomentIndex(p=2, q=2))
    """
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            p, q = (int(v) for v in chunk.split(","))
        except ValueError:
            raise ValueError(f"cannot parse moment index {chunk!r}; expected 'p,q'") from None
        out.append(MomentIndex(p, q))
    if not out:
        raise ValueError("empty moment index list")
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate moment indices in {text!r}")
    return tuple(out)


def format_indices(indices: Iterable[MomentIndex]) -> str:
    return ";".join(str(ix) for ix in indices)


def _as_index(p, q=None) -> MomentIndex:
    if isinstance(p, MomentIndex):
        return p
    return MomentIndex(int(p), int(q))


@dataclass(frozen=True)
class FeatureVector:
    """Magnitudes ``|A_pq|`` for an ordered list of moment indices."""

    indices: tuple[MomentIndex, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "indices", tuple(self.indices))
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.indices),):
            raise ValueError(
                f"feature vector has {values.shape} values for {len(self.indices)} indices")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("feature values must be finite and non-negative")

    def __len__(self):
        return len(self.indices)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.indices == other.indices and np.array_equal(self.values, other.values)

    __hash__ = None


# --------------------------------------------------------------------------
# Unit-disk geometry
# --------------------------------------------------------------------------

def to_unit_disk(col, row, width: int, height: int):
    """Map pixel centers to polar coordinates on the unit disk.

    The inscribed disk of the raster maps to the unit disk, so corner
    pixels get ``rho > 1``.  ``col`` and ``row`` may be arrays.

    Returns
    -------
    rho, theta
        ``rho`` in ``[0, sqrt(2)]``, ``theta`` in ``(-pi, pi]``.
    """
    d = min(width, height)
    x = (2 * np.asarray(col, dtype=np.float64) + 1 - width) / d
    y = (height - 2 * np.asarray(row, dtype=np.float64) - 1) / d
    rho = np.sqrt(x * x + y * y)
    theta = np.arctan2(y, x)
    if rho.ndim == 0:
        return float(rho), float(theta)
    return rho, theta


def inside_disk(col, row, width: int, height: int):
    """Exact integer test for ``rho <= 1`` at pixel centers."""
    d = min(width, height)
    x2 = 2 * np.asarray(col, dtype=np.int64) + 1 - width
    y2 = height - 2 * np.asarray(row, dtype=np.int64) - 1
    return x2 * x2 + y2 * y2 <= d * d


def pixel_area(width: int, height: int) -> float:
    """Area of one pixel after mapping to unit-disk coordinates."""
    return (2.0 / min(width, height)) ** 2


@dataclass(frozen=True)
class _DiskGrid:
    flat_index: np.ndarray  # positions of in-disk pixels in the row-major raster
    rho: np.ndarray
    theta: np.ndarray
    area: float


@lru_cache(maxsize=32)
def _disk_grid(height: int, width: int) -> _DiskGrid:
    rows, cols = np.mgrid[0:height, 0:width]
    rows = rows.ravel()
    cols = cols.ravel()
    mask = inside_disk(cols, rows, width, height)
    rho, theta = to_unit_disk(cols[mask], rows[mask], width, height)
    return _DiskGrid(np.flatnonzero(mask), rho, theta, pixel_area(width, height))


# --------------------------------------------------------------------------
# Basis functions
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _factorials() -> tuple[int, ...]:
    # Exact integers; 2 * MAX_ORDER + 1 is the largest argument used.
    return tuple(math.factorial(n) for n in range(2 * MAX_ORDER + 2))


@lru_cache(maxsize=None)
def radial_coefficients(p: int, q: int) -> tuple[tuple[int, int], ...]:
    """Integer coefficients ``(power, coefficient)`` of ``R_pq``.

    ``R_pq(rho) = sum_s (-1)^s (2p+1-s)! / (s! (p+|q|+1-s)! (p-|q|-s)!) rho^(p-s)``
    for ``s = 0 .. p-|q|``.  Each term is a multinomial coefficient and
    therefore an exact integer.
    """
    ix = MomentIndex(p, q)
    p, aq = ix.p, abs(ix.q)
    fact = _factorials()
    terms = []
    for s in range(p - aq + 1):
        num = fact[2 * p + 1 - s]
        den = fact[s] * fact[p + aq + 1 - s] * fact[p - aq - s]
        c, rem = divmod(num, den)
        assert rem == 0
        terms.append((p - s, -c if s % 2 else c))
    return tuple(terms)


def radial_poly(p: int, q: int, rho):
    """Pseudo-Zernike radial polynomial ``R_pq(rho)``.

    Evaluated by Horner's rule over the precomputed integer coefficients.
    Accepts scalar or array ``rho``.
    """
    terms = radial_coefficients(p, q)
    r = np.asarray(rho, dtype=np.float64)
    if np.any(r < 0):
        raise ValueError("rho must be non-negative")
    # terms run from the highest power down to power |q|
    acc = np.zeros_like(r)
    for power, c in terms:
        acc = acc * r + float(c)
    lowest = terms[-1][0]
    if lowest:
        acc = acc * r ** lowest
    if acc.ndim == 0:
        return float(acc)
    return acc


def basis_value(p: int, q: int, rho, theta):
    """``V_pq(rho, theta) = R_pq(rho) * exp(i q theta)``."""
    value = radial_poly(p, q, rho) * np.exp(1j * q * np.asarray(theta, dtype=np.float64))
    if np.ndim(value) == 0:
        return complex(value)
    return value


@lru_cache(maxsize=128)
def _weighted_conj_basis(height: int, width: int, p: int, q: int) -> np.ndarray:
    grid = _disk_grid(height, width)
    scale = (p + 1) / math.pi * grid.area
    return scale * np.conj(basis_value(p, q, grid.rho, grid.theta))


# --------------------------------------------------------------------------
# Moments
# --------------------------------------------------------------------------

def _pixels(image) -> np.ndarray:
    if isinstance(image, GrayImage):
        return image.pixels
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a nonempty 2-D raster, got shape {arr.shape}")
    return arr


def moment(image, p, q=None) -> complex:
    """Pseudo-Zernike moment ``A_pq`` of ``image``.

    ``A_pq = (p+1)/pi * sum_{rho<=1} f * conj(V_pq) * dA``.  ``image`` is a
    :class:`GrayImage` or a 2-D array; ``p`` may also be a
    :class:`MomentIndex`.
    """
    ix = _as_index(p, q)
    f = _pixels(image)
    h, w = f.shape
    grid = _disk_grid(h, w)
    weights = _weighted_conj_basis(h, w, ix.p, ix.q)
    return complex(f.ravel()[grid.flat_index] @ weights)


def moments(image, indices: Sequence[MomentIndex]) -> np.ndarray:
    """Complex moments for every index, in order."""
    f = _pixels(image)
    h, w = f.shape
    samples = f.ravel()[_disk_grid(h, w).flat_index]
    out = np.empty(len(indices), dtype=np.complex128)
    for i, ix in enumerate(indices):
        ix = _as_index(ix)
        out[i] = samples @ _weighted_conj_basis(h, w, ix.p, ix.q)
    return out


def extract_features(image, indices: Sequence[MomentIndex] = DEFAULT_INDICES) -> FeatureVector:
    """Feature vector of moment magnitudes ``|A_pq|``."""
    indices = tuple(_as_index(ix) for ix in indices)
    return FeatureVector(indices, np.abs(moments(image, indices)))


def all_indices(max_order: int) -> list[MomentIndex]:
    """Every ``(p, q)`` with ``|q| <= p <= max_order``."""
    return [MomentIndex(p, q) for p in range(max_order + 1) for q in range(-p, p + 1)]


def moment_table(image, max_order: int) -> dict[MomentIndex, complex]:
    indices = all_indices(max_order)
    return dict(zip(indices, moments(image, indices)))


def reconstruct(table: Mapping[MomentIndex, complex], rho, theta, max_order: int | None = None,
                return_residue: bool = False):
    """Truncated synthesis ``sum_p sum_|q|<=p A_pq V_pq(rho, theta)``.

    Returns the real part.  With ``return_residue`` the largest absolute
    imaginary part is returned as well; for a real image it should be at
    rounding level.

    Raises
    ------
    ValueError
        If ``table`` is missing any index up to ``max_order``.
    """
    table = {_as_index(k): v for k, v in table.items()}
    if max_order is None:
        max_order = max((ix.p for ix in table), default=-1)
    if max_order < 0:
        raise ValueError("empty coefficient table")
    missing = [ix for ix in all_indices(max_order) if ix not in table]
    if missing:
        raise ValueError(f"coefficient table incomplete up to order {max_order}: missing {missing[:5]}")
    rho = np.asarray(rho, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    total = np.zeros(np.broadcast(rho, theta).shape, dtype=np.complex128)
    for ix in all_indices(max_order):
        total = total + table[ix] * basis_value(ix.p, ix.q, rho, theta)
    value = total.real
    if value.ndim == 0:
        value = float(value)
    if return_residue:
        return value, float(np.max(np.abs(total.imag), initial=0.0))
    return value
