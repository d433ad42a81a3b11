"""Ingestion, preprocessing, augmentation, and the synthetic generator."""

import os

import numpy as np
import pytest

from m2unet import data, engine
from m2unet.data import AugmentConfig, Sample
from m2unet.engine import Tensor, load_tensor_text
from m2unet.errors import ConfigError, FormatError

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def _sample(size=32, seed=0):
    return data.synth_polyp_dataset(1, size, seed)[0]


class TestCodec:
    def test_known_bytes_decode_exactly(self, tmp_path):
        raw = bytes([10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120])
        path = tmp_path / "t.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + raw)
        grid = data.decode_image(str(path))
        assert grid.shape == (2, 2, 3)
        assert grid.tobytes() == raw

    def test_pgm_single_channel(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n3 2\n255\n" + bytes(range(6)))
        grid = data.decode_image(str(path))
        assert grid.shape == (2, 3, 1)
        assert grid.tobytes() == bytes(range(6))

    def test_header_comments_allowed(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n# a comment\n2 # inline\n2\n255\n" + bytes(4))
        assert data.decode_image(str(path)).shape == (2, 2, 1)

    def test_roundtrip_random_grids(self, tmp_path):
        rng = np.random.default_rng(0)
        for i, shape in enumerate([(5, 7, 3), (4, 4, 1), (1, 9, 3)]):
            grid = rng.integers(0, 256, size=shape).astype(np.uint8)
            path = str(tmp_path / f"r{i}.{'ppm' if shape[2] == 3 else 'pgm'}")
            data.encode_image(path, grid)
            assert np.array_equal(data.decode_image(path), grid)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.ppm"
        path.write_bytes(b"P3\n2 2\n255\n")
        with pytest.raises(FormatError, match="magic"):
            data.decode_image(str(path))

    def test_truncated_payload_reports_offset(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
        with pytest.raises(FormatError, match="byte offset"):
            data.decode_image(str(path))

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(FormatError, match="maxval"):
            data.decode_image(str(path))


class TestPreprocess:
    def test_normalization_endpoints(self):
        img = np.zeros((4, 4, 3), dtype=np.uint8)
        img[0, 0] = 255
        mask = np.zeros((4, 4, 1), dtype=np.uint8)
        s = data.preprocess(img, mask, 32)
        assert s.image.data.max() == pytest.approx(1.0)
        assert s.image.data.min() == pytest.approx(-1.0)
        # exact endpoints at the corners that survive resize
        s2 = data.preprocess(np.full((4, 4, 3), 255, np.uint8), mask, 32)
        assert np.all(s2.image.data == 1.0)
        s3 = data.preprocess(np.zeros((4, 4, 3), np.uint8), mask, 32)
        assert np.all(s3.image.data == -1.0)

    def test_constant_image_stays_constant(self):
        img = np.full((7, 5, 3), 77, dtype=np.uint8)
        mask = np.zeros((7, 5, 1), dtype=np.uint8)
        s = data.preprocess(img, mask, 64)
        expected = np.float32(77) / np.float32(127.5) - np.float32(1)
        assert np.all(s.image.data == expected)

    def test_mask_stays_binary_under_nearest(self):
        rng = np.random.default_rng(1)
        mask = (rng.random((9, 9, 1)) > 0.5).astype(np.uint8) * 255
        img = rng.integers(0, 256, (9, 9, 3)).astype(np.uint8)
        s = data.preprocess(img, mask, 32)
        assert set(np.unique(s.mask.data)) <= {0.0, 1.0}

    def test_mask_threshold_at_127(self):
        img = np.zeros((32, 32, 3), dtype=np.uint8)
        mask = np.full((32, 32, 1), 127, dtype=np.uint8)
        assert not data.preprocess(img, mask, 32).mask.data.any()
        mask[...] = 128
        assert data.preprocess(img, mask, 32).mask.data.all()

    def test_golden_fixture_bit_exact(self):
        img = data.decode_image(os.path.join(FIXTURES, "sample_image.ppm"))
        mask = data.decode_image(os.path.join(FIXTURES, "sample_mask.pgm"))
        s = data.preprocess(img, mask, 32, sample_id="golden")
        want_img = load_tensor_text(os.path.join(FIXTURES, "golden_image_32.txt"),
                                    dtype=np.float32)
        want_mask = load_tensor_text(os.path.join(FIXTURES, "golden_mask_32.txt"),
                                     dtype=np.float32)
        assert np.array_equal(s.image.data, want_img.data)
        assert np.array_equal(s.mask.data, want_mask.data)

    def test_degenerate_source_rejected(self):
        with pytest.raises(FormatError):
            data.preprocess(np.zeros((0, 4, 3), np.uint8),
                            np.zeros((4, 4, 1), np.uint8), 32)


class TestAugment:
    def test_hflip_is_involution(self):
        s = _sample()
        cfg = AugmentConfig(hflip_p=1.0, vflip_p=0, rotate_p=0, crop_p=0,
                            grid_p=0, cutout_p=0, cutmix_p=0)
        rng = np.random.default_rng(0)
        once = data.augment(s, cfg, rng)
        rng = np.random.default_rng(0)
        twice = data.augment(once, cfg, rng)
        assert np.array_equal(twice.image.data, s.image.data)
        assert np.array_equal(twice.mask.data, s.mask.data)

    def test_rotate_zero_degrees_identity(self):
        s = _sample()
        cfg = AugmentConfig(hflip_p=0, vflip_p=0, rotate_p=1.0, rotate_deg=0.0,
                            crop_p=0, grid_p=0, cutout_p=0, cutmix_p=0)
        out = data.augment(s, cfg, np.random.default_rng(1))
        np.testing.assert_allclose(out.image.data, s.image.data, atol=1e-6)
        assert np.array_equal(out.mask.data, s.mask.data)

    def test_geometric_ops_keep_masks_binary(self):
        s = _sample(seed=3)
        cfg = AugmentConfig(hflip_p=0.5, vflip_p=0.5, rotate_p=1.0, crop_p=1.0,
                            grid_p=1.0, cutout_p=0, cutmix_p=0)
        for seed in range(10):
            out = data.augment(s, cfg, np.random.default_rng(seed))
            assert set(np.unique(out.mask.data)) <= {0.0, 1.0}

    def test_cutout_leaves_mask_untouched(self):
        s = _sample(seed=4)
        cfg = AugmentConfig(hflip_p=0, vflip_p=0, rotate_p=0, crop_p=0,
                            grid_p=0, cutout_p=1.0, cutmix_p=0)
        out = data.augment(s, cfg, np.random.default_rng(5))
        assert np.array_equal(out.mask.data, s.mask.data)
        assert (out.image.data == 0.0).any()

    def test_cutmix_pixel_counting(self):
        size = 32
        base = Sample(Tensor(np.zeros((size, size, 3), np.float32)),
                      Tensor(np.zeros((size, size, 1), np.float32)), "base")
        donor = Sample(Tensor(np.ones((size, size, 3), np.float32)),
                       Tensor(np.ones((size, size, 1), np.float32)), "donor")
        cfg = AugmentConfig(hflip_p=0, vflip_p=0, rotate_p=0, crop_p=0,
                            grid_p=0, cutout_p=0, cutmix_p=1.0)
        seed = 6
        out = data.augment(base, cfg, np.random.default_rng(seed), donor=donor)
        # replicate the draw order to recover the pasted box extents
        rng = np.random.default_rng(seed)
        for _ in range(7):  # six gates precede the cutmix gate
            rng.random()
        lam = rng.beta(cfg.cutmix_beta, cfg.cutmix_beta)
        side = np.sqrt(1.0 - lam)
        bh = max(1, int(round(size * side)))
        bw = max(1, int(round(size * side)))
        assert out.mask.data.sum() == bh * bw
        assert (out.image.data.sum(axis=2) > 0).sum() == bh * bw

    def test_disabled_augment_is_copy(self):
        s = _sample(seed=7)
        out = data.augment(s, AugmentConfig.none(), np.random.default_rng(0))
        assert np.array_equal(out.image.data, s.image.data)
        assert out.image is not s.image

    def test_probabilities_validated(self):
        with pytest.raises(ConfigError):
            AugmentConfig(hflip_p=1.5).validate()


class TestSynth:
    def test_determinism(self):
        a = data.synth_polyp_dataset(3, 32, 11)
        b = data.synth_polyp_dataset(3, 32, 11)
        for sa, sb in zip(a, b):
            assert sa.id == sb.id
            assert sa.image.data.tobytes() == sb.image.data.tobytes()
            assert sa.mask.data.tobytes() == sb.mask.data.tobytes()

    def test_foreground_fraction_bounds(self):
        for s in data.synth_polyp_dataset(12, 64, 5):
            frac = s.mask.data.mean()
            assert 0.02 <= frac <= 0.5, s.id

    def test_empty_request(self):
        assert data.synth_polyp_dataset(0, 32, 0) == []

    def test_masks_binary_and_images_bounded(self):
        for s in data.synth_polyp_dataset(4, 32, 9):
            assert set(np.unique(s.mask.data)) <= {0.0, 1.0}
            assert s.image.data.min() >= -1.0 and s.image.data.max() <= 1.0


class TestDatasetFolder:
    def test_write_then_load_roundtrip(self, tmp_path):
        samples = data.synth_polyp_dataset(3, 32, 2)
        data.write_dataset(samples, str(tmp_path))
        ds = data.MaskDataset(str(tmp_path), 32)
        assert len(ds) == 3
        loaded = ds[0]
        assert loaded.id == samples[0].id
        # masks are exact through the 0/255 encode/threshold cycle
        assert np.array_equal(loaded.mask.data, samples[0].mask.data)
        # images survive 8-bit quantization to within half a step
        assert np.abs(loaded.image.data - samples[0].image.data).max() <= (1.0 / 127.5)

    def test_iteration_order_sorted_and_stable(self, tmp_path):
        samples = data.synth_polyp_dataset(5, 32, 3)
        data.write_dataset(samples, str(tmp_path))
        ds1 = data.MaskDataset(str(tmp_path), 32)
        ds2 = data.MaskDataset(str(tmp_path), 32)
        assert ds1.ids == sorted(ds1.ids) == ds2.ids

    def test_missing_folders_rejected(self, tmp_path):
        with pytest.raises(FormatError):
            data.MaskDataset(str(tmp_path / "nope"), 32)
