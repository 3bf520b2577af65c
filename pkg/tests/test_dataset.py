import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from zmprune.dataset import (Corpus, CorpusError, GrayImage, load_corpus, load_image, split, to_gray,
                             write_synthetic_corpus)


def _png(path, value=128, size=(6, 5), mode="L"):
    path.parent.mkdir(parents=True, exist_ok=True)
    color = value if mode == "L" else (value, value, value)
    Image.new(mode, size, color).save(path)
    return path


class TestToGray:
    def test_white_black(self):
        assert to_gray(np.full((2, 2, 3), 255, np.uint8)).pixels[0, 0] == 1.0
        assert to_gray(np.zeros((2, 2, 3), np.uint8)).pixels[0, 0] == 0.0

    def test_red(self):
        px = np.zeros((1, 1, 3), np.uint8)
        px[..., 0] = 255
        assert to_gray(px).pixels[0, 0] == pytest.approx(0.299, abs=1e-12)

    def test_luma_passthrough(self):
        px = np.array([[0, 51, 255]], np.uint8)
        np.testing.assert_allclose(to_gray(px).pixels, [[0.0, 0.2, 1.0]])

    def test_rgba_ignores_alpha(self):
        px = np.zeros((1, 1, 4), np.uint8)
        px[..., 1] = 255
        assert to_gray(px).pixels[0, 0] == pytest.approx(0.587)

    def test_pil_input(self):
        im = Image.new("RGB", (3, 2), (0, 0, 255))
        g = to_gray(im)
        assert (g.width, g.height) == (3, 2)
        assert g.pixels[1, 2] == pytest.approx(0.114)

    @pytest.mark.parametrize("shape", [(0, 4), (3, 0, 3), (4,)])
    def test_rejects_empty(self, shape):
        with pytest.raises(ValueError):
            to_gray(np.zeros(shape, np.uint8))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.sampled_from([3, 4]))))
    def test_bounds(self, px):
        g = to_gray(px).pixels
        assert g.min() >= 0.0 and g.max() <= 1.0

    def test_float_out_of_range(self):
        with pytest.raises(ValueError):
            to_gray(np.array([[0.5, 1.2]]))

    def test_gray_image_validates(self):
        with pytest.raises(ValueError):
            GrayImage(np.array([[1.5]]))
        img = GrayImage(np.zeros((3, 2)))
        assert (img.width, img.height) == (2, 3)
        assert len(img.pixels.ravel()) == img.width * img.height


class TestLoadCorpus:
    def test_folders_fixture(self, tmp_path):
        for c in range(3):
            for j in range(4):
                _png(tmp_path / f"c{c}" / f"{j}.png", 40 * c + j)
        corpus = load_corpus(tmp_path)
        assert corpus.layout == "folders"
        assert corpus.n_categories == 3
        assert [len(c.image_ids) for c in corpus.categories] == [4, 4, 4]
        assert corpus.image_ids == tuple(range(1, 13))
        assert corpus.category_of(5) == 2

    def test_minimal(self, tmp_path):
        _png(tmp_path / "only" / "a.png")
        corpus = load_corpus(tmp_path)
        assert corpus.n_categories == 1 and len(corpus) == 1

    def test_corel_layout(self, tmp_path):
        for k in range(300):
            _png(tmp_path / f"{k}.jpg", k % 256, mode="RGB")
        corpus = load_corpus(tmp_path, "corel", per_category=100)
        assert corpus.layout == "corel"
        assert corpus.n_categories == 3
        assert corpus.category_of(0) == 1 and corpus.category_of(99) == 1 and corpus.category_of(100) == 2
        assert corpus.image_ids == tuple(range(300))

    def test_corel_small_categories(self, tmp_path):
        for k in range(12):
            _png(tmp_path / f"{k}.png")
        corpus = load_corpus(tmp_path, per_category=4)
        assert corpus.layout == "corel" and corpus.n_categories == 3

    def test_ordering_independent_of_creation_order(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for name in ["z.png", "m.png", "a.png"]:
            _png(a / "x" / name)
            _png(a / "y" / name)
        for name in ["a.png", "m.png", "z.png"]:
            _png(b / "y" / name)
            _png(b / "x" / name)
        ca, cb = load_corpus(a), load_corpus(b)
        assert ca.categories == cb.categories
        assert [p.name for _, p in sorted(ca.paths.items())] == ["a.png", "m.png", "z.png"] * 2

    def test_reload_identical(self, synthetic_root):
        assert load_corpus(synthetic_root) == load_corpus(synthetic_root)

    def test_missing_dir(self, tmp_path):
        with pytest.raises(CorpusError, match="not found"):
            load_corpus(tmp_path / "nope")

    def test_empty_category(self, tmp_path):
        _png(tmp_path / "a" / "1.png")
        (tmp_path / "b").mkdir()
        with pytest.raises(CorpusError, match="no images"):
            load_corpus(tmp_path)

    def test_corel_gap(self, tmp_path):
        _png(tmp_path / "0.png")
        _png(tmp_path / "250.png")
        with pytest.raises(CorpusError, match="empty categories"):
            load_corpus(tmp_path, "corel")

    def test_corrupt_file_reported_with_path(self, tmp_path):
        _png(tmp_path / "a" / "good.png")
        bad = tmp_path / "a" / "bad.png"
        bad.write_bytes(b"\x89PNG\r\n\x1a\nnot really")
        with pytest.raises(CorpusError, match="bad.png"):
            load_corpus(tmp_path)

    def test_load_image_gray(self, tmp_path):
        path = _png(tmp_path / "x.png", 255)
        img = load_image(path)
        assert img.pixels.shape == (5, 6) and img.pixels.max() == 1.0

    def test_corpus_invariants(self, tmp_path):
        from zmprune.dataset import Category
        with pytest.raises(CorpusError):
            Corpus(tmp_path, "folders", (Category(2, "x", (1,)),), {})
        with pytest.raises(CorpusError):
            Corpus(tmp_path, "folders", (Category(1, "x", (1,)), Category(2, "y", (1,))), {})


def _fake_corpus(sizes):
    from zmprune.dataset import Category
    cats, next_id = [], 0
    for c, m in enumerate(sizes, start=1):
        cats.append(Category(c, str(c), tuple(range(next_id, next_id + m))))
        next_id += m
    return Corpus(None, "folders", tuple(cats), {})


class TestSplit:
    def test_ten_by_hundred(self):
        sp = split(_fake_corpus([100] * 10), seed=11)
        assert len(sp.train_ids) == 500 and len(sp.test_ids) == 500

    def test_two_images(self):
        sp = split(_fake_corpus([2]), seed=0)
        assert len(sp.train_ids) == 1 and len(sp.test_ids) == 1

    def test_deterministic(self):
        corpus = _fake_corpus([7, 9, 4])
        assert split(corpus, 5) == split(corpus, 5)
        assert split(corpus, 5) != split(corpus, 6)

    def test_singleton_flagged(self):
        sp = split(_fake_corpus([1, 4]), seed=0)
        assert sp.flagged_categories == (1,)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(1, 15), min_size=1, max_size=6), st.integers(0, 2 ** 32 - 1))
    def test_partition_and_stratified(self, sizes, seed):
        corpus = _fake_corpus(sizes)
        sp = split(corpus, seed)
        assert not sp.train_ids & sp.test_ids
        assert sp.train_ids | sp.test_ids == set(corpus.image_ids)
        for cat in corpus.categories:
            ids = set(cat.image_ids)
            assert len(ids & sp.train_ids) == math.ceil(len(ids) / 2)
            assert len(ids & sp.test_ids) == len(ids) // 2


def test_synthetic_corpus_deterministic(tmp_path):
    a = write_synthetic_corpus(tmp_path / "a", 2, 3, size=16, seed=1)
    b = write_synthetic_corpus(tmp_path / "b", 2, 3, size=16, seed=1)
    for pa, pb in zip(sorted(a.rglob("*.png")), sorted(b.rglob("*.png"))):
        assert pa.read_bytes() == pb.read_bytes()
    corel = write_synthetic_corpus(tmp_path / "c", 2, 3, size=16, layout="corel")
    assert load_corpus(corel, per_category=3).n_categories == 2
