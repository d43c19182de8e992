import numpy as np
import pytest
from PIL import Image

from src.data import (
    ImageCorpus,
    SyntheticDomain,
    SyntheticSpec,
    batch_iterator,
    bilinear_resize,
    load_corpus,
    resolve_corpus,
    subsample,
    synth_generate,
    write_corpus,
)
from src.errors import DataError
from src.metrics import proxy_fid


def _save(path, color, size=8, mode="RGB"):
    Image.new(mode, (size, size), color).save(path)


def _corpus(n=10):
    images = np.arange(n, dtype=np.float32).reshape(n, 1, 1, 1) * np.ones((1, 1, 2, 2), np.float32)
    return ImageCorpus(images, provenance="test")


class TestResize:
    def test_downscale_by_two_averages_blocks(self):
        image = np.arange(16, dtype=np.float64).reshape(4, 4, 1)
        out = bilinear_resize(image, 2)
        np.testing.assert_allclose(out[..., 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_same_size_is_exact(self, rng):
        image = rng.uniform(size=(5, 5, 3))
        np.testing.assert_array_equal(bilinear_resize(image, 5), image)

    def test_constant_image_stays_constant(self):
        out = bilinear_resize(np.full((7, 7, 3), 0.25), 16)
        np.testing.assert_allclose(out, 0.25)


class TestLoadCorpus:
    def test_white_and_black(self, tmp_path):
        _save(tmp_path / "a.png", (255, 255, 255))
        _save(tmp_path / "b.png", (0, 0, 0))
        corpus = load_corpus(tmp_path, 4)
        assert corpus.images.shape == (2, 3, 4, 4)
        np.testing.assert_allclose(corpus.images[0], 1.0)
        np.testing.assert_allclose(corpus.images[1], -1.0)

    def test_grayscale_uses_luminance(self, tmp_path):
        _save(tmp_path / "red.png", (255, 0, 0))
        corpus = load_corpus(tmp_path, 4, grayscale=True)
        assert corpus.channels == 1
        np.testing.assert_allclose(corpus.images, 0.299 * 2 - 1, atol=1e-6)

    def test_gray_file_is_replicated_for_colour_runs(self, tmp_path):
        _save(tmp_path / "g.png", 255, mode="L")
        corpus = load_corpus(tmp_path, 4)
        assert corpus.images.shape == (1, 3, 4, 4)
        np.testing.assert_allclose(corpus.images, 1.0)

    def test_sixteen_bit_gray_is_rescaled(self, tmp_path):
        levels = np.zeros((4, 4), dtype=np.uint16)
        levels[:2] = 65535
        levels[2] = 257 * 51
        Image.fromarray(levels).save(tmp_path / "deep.png")
        corpus = load_corpus(tmp_path, 4, grayscale=True)
        image = corpus.images[0, 0]
        np.testing.assert_allclose(image[:2], 1.0, atol=1e-6)
        np.testing.assert_allclose(image[2], 51 / 127.5 - 1.0, atol=1e-6)
        np.testing.assert_allclose(image[3], -1.0, atol=1e-6)

    def test_pgm_files_are_read(self, tmp_path):
        _save(tmp_path / "g.pgm", 0, mode="L")
        assert load_corpus(tmp_path, 4, grayscale=True).images.shape == (1, 1, 4, 4)

    def test_name_order(self, tmp_path):
        _save(tmp_path / "b.png", (0, 0, 0))
        _save(tmp_path / "a.png", (255, 255, 255))
        corpus = load_corpus(tmp_path, 4, workers=2)
        assert corpus.images[0].mean() == pytest.approx(1.0)

    def test_undecodable_file_is_named(self, tmp_path):
        _save(tmp_path / "a.png", (0, 0, 0))
        (tmp_path / "broken.png").write_bytes(b"not an image")
        with pytest.raises(DataError, match="broken.png"):
            load_corpus(tmp_path, 4)

    def test_empty_directory(self, tmp_path):
        (tmp_path / "notes.txt").write_text("hello")
        with pytest.raises(DataError):
            load_corpus(tmp_path, 4)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataError):
            load_corpus(tmp_path / "nope", 4)

    def test_written_corpus_loads_back(self, tmp_path, target_corpus):
        write_corpus(target_corpus, tmp_path / "images")
        loaded = load_corpus(tmp_path / "images", target_corpus.resolution)
        np.testing.assert_allclose(loaded.images, target_corpus.images, atol=1 / 127.5)


class TestSubsample:
    def test_matches_seeded_permutation(self):
        corpus = _corpus(50)
        picked = subsample(corpus, 25, seed=4)
        expected = np.random.default_rng(4).permutation(50)[:25]
        np.testing.assert_array_equal(picked.indices, expected)
        np.testing.assert_array_equal(picked.images[:, 0, 0, 0], expected.astype(np.float32))

    def test_full_size_keeps_membership(self):
        corpus = _corpus(10)
        picked = subsample(corpus, 10, seed=1)
        assert set(picked.indices.tolist()) == set(range(10))

    def test_no_duplicates_and_deterministic(self):
        a = subsample(_corpus(30), 12, seed=2)
        b = subsample(_corpus(30), 12, seed=2)
        assert len(set(a.indices.tolist())) == 12
        np.testing.assert_array_equal(a.indices, b.indices)

    def test_nested_subsample_tracks_parent_indices(self):
        first = subsample(_corpus(30), 12, seed=2)
        second = subsample(first, 5, seed=3)
        np.testing.assert_array_equal(second.images[:, 0, 0, 0], second.indices.astype(np.float32))

    @pytest.mark.parametrize("n", [0, 11])
    def test_out_of_range(self, n):
        with pytest.raises(DataError):
            subsample(_corpus(10), n, seed=0)


class TestBatches:
    def test_first_epoch_follows_seeded_shuffle(self):
        corpus = _corpus(8)
        stream = batch_iterator(corpus, 4, seed=5)
        seen = np.concatenate([next(stream)[:, 0, 0, 0] for _ in range(2)])
        np.testing.assert_array_equal(seen, np.random.default_rng(5).permutation(8).astype(np.float32))

    def test_every_image_once_per_epoch(self):
        stream = batch_iterator(_corpus(9), 3, seed=0)
        for _ in range(3):
            epoch = np.concatenate([next(stream)[:, 0, 0, 0] for _ in range(3)])
            assert sorted(epoch.tolist()) == list(range(9))

    def test_wraps_across_epochs(self):
        stream = batch_iterator(_corpus(5), 2, seed=0)
        batches = [next(stream) for _ in range(10)]
        assert all(b.shape == (2, 1, 2, 2) for b in batches)

    def test_same_seed_same_stream(self):
        a = batch_iterator(_corpus(7), 3, seed=9)
        b = batch_iterator(_corpus(7), 3, seed=9)
        for _ in range(6):
            np.testing.assert_array_equal(next(a), next(b))

    def test_batch_larger_than_corpus(self):
        with pytest.raises(DataError):
            batch_iterator(_corpus(3), 4, seed=0)


class TestSynthetic:
    def test_deterministic(self):
        spec = SyntheticSpec(domain=SyntheticDomain.SOURCE_SHAPES, count=6, seed=1, size=16)
        np.testing.assert_array_equal(synth_generate(spec).images, synth_generate(spec).images)

    @pytest.mark.parametrize("domain", list(SyntheticDomain))
    def test_range_and_shape(self, domain):
        corpus = synth_generate(SyntheticSpec(domain=domain, count=5, seed=0, size=16))
        assert corpus.images.shape == (5, 3, 16, 16)
        assert corpus.images.dtype == np.float32
        assert corpus.images.min() >= -1.0 and corpus.images.max() <= 1.0

    def test_grayscale(self):
        corpus = synth_generate(SyntheticSpec(domain="target_shapes", count=3, size=16, grayscale=True))
        assert corpus.channels == 1

    def test_domains_differ(self):
        source = synth_generate(SyntheticSpec(domain="source_shapes", count=32, seed=0, size=16))
        target = synth_generate(SyntheticSpec(domain="target_shapes", count=32, seed=0, size=16))
        assert proxy_fid(source.images, target.images) > 0.0


class TestResolve:
    def test_synthetic_with_limit(self):
        corpus = resolve_corpus("synth:target_shapes", 16, False, count=20, seed=0, limit_n=5)
        assert len(corpus) == 5
        assert "subsample(n=5" in corpus.provenance

    def test_unknown_domain(self):
        with pytest.raises(DataError):
            resolve_corpus("synth:cathedrals", 16, False, count=4, seed=0)

    def test_directory(self, tmp_path):
        _save(tmp_path / "a.png", (255, 255, 255))
        assert len(resolve_corpus(str(tmp_path), 16, False, count=4, seed=0)) == 1
