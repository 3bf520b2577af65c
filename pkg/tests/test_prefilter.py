import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import survivors_brute
from zmprune.features import FeatureTable
from zmprune.index import CategoryStats, FeatureChannelIndex, PrefilterIndex, build_index_from_table
from zmprune.prefilter import (FilterMode, Interval, QueryInterval, diagnostic_rows, filter_candidates,
                               full_candidates, query_interval)
from zmprune.zernike import DEFAULT_INDICES, FeatureVector, MomentIndex


def channel(centers, radius=1.0, r_max=None):
    stats = [CategoryStats(i + 1, c - radius, c + radius, c, radius) for i, c in enumerate(centers)]
    ch = FeatureChannelIndex.from_stats(MomentIndex(0, 0), stats)
    return ch if r_max is None else dataclasses.replace(ch, r_max=r_max)


def brute_channels(index):
    return [([s.a for s in ch.stats], [s.b for s in ch.stats], [s.c for s in ch.stats], ch.r_max)
            for ch in index.channels]


def random_index(rng, n_cat=6, per_cat=8, n_feat=3, spread=1.0):
    cats = np.repeat(np.arange(1, n_cat + 1), per_cat)
    centers = rng.uniform(0, 10, size=(n_cat, n_feat))
    values = centers[cats - 1] + rng.normal(0, spread, size=(len(cats), n_feat))
    table = FeatureTable(DEFAULT_INDICES[:n_feat], rng.permutation(len(cats)) * 3 + 1, cats, values)
    return build_index_from_table(table)


class TestQueryInterval:
    def test_s1(self):
        qi = query_interval(5.0, channel([0.0], r_max=2.0))
        assert qi.s1 == Interval(3.0, 7.0)
        assert qi.s1.width == 2 * 2.0

    def test_nearest_center(self):
        ch = channel([2.0, 6.0, 9.0], radius=0.5)
        qi = query_interval(5.0, ch)
        assert qi.category == 2
        assert qi.s2 == Interval(5.5, 6.5)

    def test_tie_goes_to_smallest_id(self):
        assert query_interval(5.0, channel([4.0, 6.0])).category == 1
        assert query_interval(5.0, channel([6.0, 4.0])).category == 1

    def test_union_overlapping(self):
        qi = QueryInterval(Interval(0, 2), Interval(1, 5), 1)
        assert qi.sq == (Interval(0, 5),)

    def test_union_disjoint(self):
        qi = QueryInterval(Interval(4, 6), Interval(0, 1), 1)
        assert qi.sq == (Interval(0, 1), Interval(4, 6))
        assert 0.5 in qi and 5 in qi and 2 not in qi

    @given(st.floats(-50, 50), st.lists(st.floats(-50, 50), min_size=1, max_size=8),
           st.floats(0, 10), st.floats(-60, 60))
    def test_membership_is_union(self, f, centers, r, v):
        qi = query_interval(f, channel(centers, radius=r))
        assert (v in qi) == (v in qi.s1 or v in qi.s2) == any(v in iv for iv in qi.sq)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            query_interval(float("nan"), channel([1.0]))


class TestFilterMode:
    @pytest.mark.parametrize("text,label", [("all", "all"), ("union", "union"), ("single:2", "single:2")])
    def test_parse(self, text, label):
        assert FilterMode.parse(text).label == label

    @pytest.mark.parametrize("text", ["single:0", "single:x", "both", ""])
    def test_bad(self, text):
        with pytest.raises(ValueError):
            FilterMode.parse(text)

    def test_out_of_range(self, rng):
        with pytest.raises(ValueError):
            filter_candidates(np.zeros(3), random_index(rng), "single:4")


class TestFilterCandidates:
    def test_everything_inside(self):
        table = FeatureTable(DEFAULT_INDICES[:1], [1, 2, 3], [1, 1, 2], [[0.0], [1.0], [0.5]])
        index = build_index_from_table(table)
        c = filter_candidates([0.5], index)
        assert c.id_set() == {1, 2, 3} and not c.fallback

    def test_own_category_survives(self, synthetic):
        _, _, _, index = synthetic
        t = index.features
        for image_id, cat, v in zip(t.ids, t.categories, t.values):
            cands = filter_candidates(v, index, diagnostics=True)
            for j in range(len(index.channels)):
                if query_interval(v[j], index.channels[j]).category == cat:
                    own = set(t.ids[t.categories == cat].tolist())
                    assert own <= set(cands.per_channel_survivors[j].tolist())

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31), st.sampled_from(["all", "union", "single:1", "single:3"]))
    def test_matches_brute_force(self, seed, mode):
        rng = np.random.default_rng(seed)
        index = random_index(rng, spread=rng.uniform(0.1, 3))
        t = index.features
        chans = brute_channels(index)
        ids = t.ids.tolist()
        rows = t.values.tolist()
        m = FilterMode.parse(mode)
        sel = m.resolve(3)
        for _ in range(10):
            q = rng.uniform(-2, 12, size=3)
            got = filter_candidates(q, index, m)
            want = survivors_brute([q[j] for j in sel], ids, [[r[j] for j in sel] for r in rows],
                                   [chans[j] for j in sel], m.combine)
            if want:
                assert got.id_set() == want and not got.fallback
            else:
                assert got.fallback and got.id_set() == set(ids)

    def test_s1_symmetry(self, rng):
        index = random_index(rng)
        t = index.features
        q = rng.uniform(0, 10, size=3)
        c = filter_candidates(q, index, "single:2")
        near = np.abs(t.values[:, 1] - q[1]) <= index.channels[1].r_max
        assert set(t.ids[near].tolist()) <= c.id_set()

    def test_rmax_monotone(self, rng):
        index = random_index(rng, spread=0.5)
        wider = PrefilterIndex(tuple(dataclasses.replace(ch, r_max=ch.r_max * 1.5) for ch in index.channels),
                               index.features, index.split_seed)
        for _ in range(30):
            q = rng.uniform(0, 10, size=3)
            for j in range(3):
                m = FilterMode((j,))
                assert filter_candidates(q, index, m).id_set() <= filter_candidates(q, wider, m).id_set()

    def test_channels_anti_monotone(self, rng):
        index = random_index(rng)
        for _ in range(30):
            q = rng.uniform(0, 10, size=3)
            two = filter_candidates(q, index, FilterMode((0, 1)))
            three = filter_candidates(q, index, FilterMode((0, 1, 2)))
            if not three.fallback and not two.fallback:
                assert three.id_set() <= two.id_set()

    def test_union_contains_intersection(self, rng):
        index = random_index(rng)
        q = rng.uniform(0, 10, size=3)
        assert filter_candidates(q, index, "all").id_set() <= filter_candidates(q, index, "union").id_set()

    def test_fallback(self):
        # channel 1 picks category 1, channel 2 picks category 2; the intervals share no image
        table = FeatureTable(DEFAULT_INDICES[:2], [1, 2, 3, 4], [1, 1, 2, 2],
                             [[0.0, 10.0], [0.1, 10.1], [10.0, 0.0], [10.1, 0.1]])
        index = build_index_from_table(table)
        c = filter_candidates([0.05, 0.05], index)
        assert c.fallback and c.id_set() == {1, 2, 3, 4}

    def test_subset_of_indexed(self, synthetic):
        _, _, table, index = synthetic
        for v in table.values[:20]:
            assert filter_candidates(v, index).id_set() <= set(index.features.ids.tolist())

    def test_feature_vector_mismatch(self, synthetic):
        index = synthetic[3]
        with pytest.raises(ValueError):
            filter_candidates(FeatureVector((MomentIndex(1, 1),), [0.1]), index)
        with pytest.raises(ValueError):
            filter_candidates([0.1, 0.2], index)

    def test_rows_align_with_ids(self, synthetic):
        index = synthetic[3]
        c = filter_candidates(synthetic[2].values[0], index)
        np.testing.assert_array_equal(index.features.ids[c.rows], c.image_ids)
        assert len(full_candidates(index)) == len(index)

    def test_diagnostics(self, synthetic):
        index = synthetic[3]
        v = synthetic[2].values[0]
        rows = diagnostic_rows(v, index)
        assert [r["channel"] for r in rows] == [1, 2, 3]
        c = filter_candidates(v, index, diagnostics=True)
        for r in rows:
            assert r["survivors"] == len(c.per_channel_survivors[r["channel"] - 1])
            assert r["s1_hi"] - r["s1_lo"] == pytest.approx(2 * index.channels[r["channel"] - 1].r_max)
