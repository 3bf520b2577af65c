"""Online phase: query intervals and candidate pruning.

For one feature channel and query value ``f``:

* ``s1 = [f - r_max, f + r_max]``
* ``s2 = [a_m, b_m]`` where ``m`` is the category whose center is nearest
  to ``f`` (ties go to the smallest category id)
* an indexed image survives the channel when its stored value lies in
  ``s1`` or in ``s2`` (closed intervals).

Channels are combined by intersection (default) or union.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from zmprune.index import FeatureChannelIndex, PrefilterIndex
from zmprune.zernike import FeatureVector


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __contains__(self, v) -> bool:
        return self.lo <= v <= self.hi

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class QueryInterval:
    s1: Interval
    s2: Interval
    category: int  # nearest-center category, the source of s2

    @property
    def sq(self) -> tuple[Interval, ...]:
        """``s1`` union ``s2`` as one or two disjoint intervals, ascending."""
        first, second = sorted((self.s1, self.s2), key=lambda iv: (iv.lo, iv.hi))
        if second.lo <= first.hi:
            return (Interval(first.lo, max(first.hi, second.hi)),)
        return (first, second)

    def __contains__(self, v) -> bool:
        return v in self.s1 or v in self.s2


def nearest_center(f_q: float, channel: FeatureChannelIndex) -> int:
    centers = np.array([s.c for s in channel.stats])
    # np.argmin returns the first minimum; stats are sorted by category id
    return channel.stats[int(np.argmin(np.abs(f_q - centers)))].category_id


def query_interval(f_q: float, channel: FeatureChannelIndex) -> QueryInterval:
    f_q = float(f_q)
    if not np.isfinite(f_q):
        raise ValueError("query feature must be finite")
    m = nearest_center(f_q, channel)
    st = channel.stats_for(m)
    return QueryInterval(Interval(f_q - channel.r_max, f_q + channel.r_max), Interval(st.a, st.b), m)


@dataclass(frozen=True)
class FilterMode:
    """Which channels take part and how their survivor sets combine.

    ``channels`` holds 0-based channel positions, ``None`` for all.  The
    textual form used on the command line is ``all``, ``union`` or
    ``single:<i>`` with a 1-based channel number.
    """

    channels: tuple[int, ...] | None = None
    combine: str = "intersection"

    def __post_init__(self):
        if self.combine not in ("intersection", "union"):
            raise ValueError(f"unknown combine rule {self.combine!r}")

    @classmethod
    def parse(cls, text: str) -> "FilterMode":
        text = text.strip()
        if text == "all":
            return cls()
        if text == "union":
            return cls(None, "union")
        if text.startswith("single:"):
            try:
                i = int(text.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad channel number in {text!r}") from None
            if i < 1:
                raise ValueError("channel numbers start at 1")
            return cls((i - 1,))
        raise ValueError(f"unknown filter mode {text!r}; expected single:<i>, all or union")

    @property
    def label(self) -> str:
        if self.channels is None:
            return "all" if self.combine == "intersection" else "union"
        if len(self.channels) == 1:
            return f"single:{self.channels[0] + 1}"
        joined = "+".join(str(c + 1) for c in self.channels)
        return f"{'and' if self.combine == 'intersection' else 'or'}:{joined}"

    def resolve(self, n_channels: int) -> list[int]:
        chans = list(range(n_channels)) if self.channels is None else list(self.channels)
        bad = [c for c in chans if not 0 <= c < n_channels]
        if bad:
            raise ValueError(f"channel(s) {[c + 1 for c in bad]} out of range 1..{n_channels}")
        return chans


ALL = FilterMode()


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Images forwarded to ranking.

    ``rows`` are positions in the index's feature table, aligned with
    ``image_ids``.  ``fallback`` is set when the combined survivor set was
    empty and the full indexed set was substituted.
    """

    image_ids: np.ndarray
    rows: np.ndarray
    fallback: bool = False
    per_channel_survivors: dict | None = None

    def __len__(self):
        return len(self.image_ids)

    def __contains__(self, image_id) -> bool:
        i = np.searchsorted(self.image_ids, image_id)
        return i < len(self.image_ids) and self.image_ids[i] == image_id

    def id_set(self) -> frozenset:
        return frozenset(int(i) for i in self.image_ids)


def full_candidates(index: PrefilterIndex) -> CandidateSet:
    return CandidateSet(index.features.ids, np.arange(len(index.features)))


def _query_values(query_features, index: PrefilterIndex) -> np.ndarray:
    if isinstance(query_features, FeatureVector):
        if query_features.indices != index.indices:
            raise ValueError(f"query features {list(map(str, query_features.indices))} do not match "
                             f"index channels {list(map(str, index.indices))}")
        return query_features.values
    values = np.asarray(query_features, dtype=np.float64)
    if values.shape != (len(index.indices),):
        raise ValueError(f"expected {len(index.indices)} query values, got shape {values.shape}")
    return values


def channel_masks(query_features, index: PrefilterIndex, channels: Sequence[int] | None = None):
    """Boolean survivor masks, shape ``(len(channels), n_indexed)``.

    Also returns the nearest-center category position per channel.
    """
    f = _query_values(query_features, index)
    if channels is None or len(channels) == len(f) and list(channels) == list(range(len(f))):
        centers, lows, highs = index.centers, index.lows, index.highs
        rmax, v = index.r_max, index.values_by_channel
    else:
        chans = list(channels)
        f = f[chans]
        centers, lows, highs = index.centers[chans], index.lows[chans], index.highs[chans]
        rmax, v = index.r_max[chans], index.values_by_channel[chans]
    m = np.argmin(np.abs(f[:, None] - centers), axis=1)
    rows = np.arange(len(f))
    s1_lo = (f - rmax)[:, None]
    s1_hi = (f + rmax)[:, None]
    s2_lo = lows[rows, m][:, None]
    s2_hi = highs[rows, m][:, None]
    mask = ((v >= s1_lo) & (v <= s1_hi)) | ((v >= s2_lo) & (v <= s2_hi))
    return mask, m


def filter_candidates(query_features, index: PrefilterIndex, mode: FilterMode = ALL,
                      diagnostics: bool = False) -> CandidateSet:
    """Prune the indexed set down to the images inside every channel's interval.

    An empty combined result falls back to the full indexed set with
    ``fallback=True``.
    """
    if isinstance(mode, str):
        mode = FilterMode.parse(mode)
    chans = mode.resolve(len(index.indices))
    mask, _ = channel_masks(query_features, index, chans)
    keep = mask.all(axis=0) if mode.combine == "intersection" else mask.any(axis=0)
    rows = np.flatnonzero(keep)
    fallback = rows.size == 0
    if fallback:
        rows = np.arange(len(index.features))
    per_channel = None
    if diagnostics:
        per_channel = {c: index.features.ids[mask[k]] for k, c in enumerate(chans)}
    return CandidateSet(index.features.ids[rows], rows, fallback, per_channel)


def diagnostic_rows(query_features, index: PrefilterIndex, mode: FilterMode = ALL) -> list[dict]:
    """One record per channel: intervals, chosen category and survivor count."""
    if isinstance(mode, str):
        mode = FilterMode.parse(mode)
    f = _query_values(query_features, index)
    chans = mode.resolve(len(index.indices))
    mask, _ = channel_masks(f, index, chans)
    out = []
    for k, c in enumerate(chans):
        qi = query_interval(f[c], index.channels[c])
        out.append({
            "channel": c + 1,
            "feature": index.channels[c].feature_index.label,
            "f_q": float(f[c]),
            "s1_lo": qi.s1.lo, "s1_hi": qi.s1.hi,
            "s2_lo": qi.s2.lo, "s2_hi": qi.s2.hi,
            "argmin_category": qi.category,
            "survivors": int(mask[k].sum()),
        })
    return out
