"""Synthesis tests: generator geometry, compositing identity, crop
statistics, augmentation invariants, and byte-level dataset determinism."""

import numpy as np
import pytest

from mattekit.matting import BG, FG, UNKNOWN, composite, derive_optimal_trimap
from mattekit.synth import (
    AugmentConfig,
    SampleRecord,
    augment,
    crop_on_unknown,
    gen_background,
    gen_foreground,
    make_sample,
    read_dataset,
    read_manifest,
    read_sample,
    synth_sample,
    write_dataset,
)


class TestDisc:
    def _disc(self, r_inner, r_outer, size=64):
        rng = np.random.default_rng(0)
        return gen_foreground("disc", size, rng, r_outer=r_outer, r_inner=r_inner,
                              jitter=0.0)

    def test_center_fully_opaque(self):
        _, alpha = self._disc(10.0, 20.0)
        assert alpha[31, 31] == 1.0 and alpha[32, 32] == 1.0

    def test_zero_at_outer_radius(self):
        r_out = 20.0
        _, alpha = self._disc(10.0, r_out, size=64)
        cy = cx = 31.5
        yy, xx = np.mgrid[0:64, 0:64]
        dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        assert (alpha[dist >= r_out] == 0.0).all()

    def test_midpoint_half(self):
        # Pixel at distance (r_in + r_out)/2 has alpha exactly 0.5: place
        # the midpoint on the pixel grid by construction.
        r_in, r_out = 10.0, 20.0
        _, alpha = self._disc(r_in, r_out)
        # center is (31.5, 31.5); pixel (31.5, 31.5+15) is not on grid, so
        # probe along the row at y=31.5 -> use continuous dist per pixel.
        yy, xx = np.mgrid[0:64, 0:64]
        dist = np.sqrt((yy - 31.5) ** 2 + (xx - 31.5) ** 2)
        mid = (r_in + r_out) / 2
        probe = np.isclose(dist, mid, atol=1e-9)
        if probe.any():
            np.testing.assert_allclose(alpha[probe], 0.5)
        # Linear ramp everywhere in the band regardless of grid alignment.
        band = (dist > r_in) & (dist < r_out)
        np.testing.assert_allclose(alpha[band], (r_out - dist[band]) / (r_out - r_in),
                                   atol=1e-12)

    def test_invalid_radii(self):
        with pytest.raises(ValueError):
            self._disc(20.0, 10.0)
        with pytest.raises(ValueError):
            self._disc(-1.0, 10.0)
        with pytest.raises(ValueError):
            self._disc(10.0, 40.0, size=64)  # exceeds half-size

    def test_random_disc_has_all_three_regions(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            _, alpha = gen_foreground("disc", 64, rng)
            t = derive_optimal_trimap(alpha)
            assert (t == FG).any() and (t == BG).any() and (t == UNKNOWN).any()


class TestStrands:
    def test_alpha_range_and_coverage(self):
        rng = np.random.default_rng(2)
        fg, alpha = gen_foreground("strands", 64, rng)
        assert alpha.min() >= 0.0 and alpha.max() <= 1.0
        assert alpha.max() == 1.0  # core of a strand is opaque
        frac = ((alpha > 0) & (alpha < 1)).mean()
        assert frac > 0.01  # soft edges exist

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            gen_foreground("blob", 64, np.random.default_rng(3))


class TestBackground:
    def test_range_and_shape(self):
        rng = np.random.default_rng(4)
        bg = gen_background(64, rng)
        assert bg.shape == (64, 64, 3)
        assert bg.min() >= 0.0 and bg.max() <= 1.0

    def test_hard_mode_hugs_foreground_color(self):
        rng = np.random.default_rng(5)
        fg_rgb = np.array([0.6, 0.3, 0.4])
        dists_hard, dists_easy = [], []
        for _ in range(20):
            hard = gen_background(32, rng, hard=True, fg_rgb=fg_rgb, texture=False)
            easy = gen_background(32, rng, hard=False, fg_rgb=fg_rgb, texture=False)
            dists_hard.append(np.abs(hard.mean(axis=(0, 1)) - fg_rgb).mean())
            dists_easy.append(np.abs(easy.mean(axis=(0, 1)) - fg_rgb).mean())
        assert np.mean(dists_hard) < np.mean(dists_easy)


class TestMakeSample:
    def test_zero_radii_gives_optimal_trimap(self):
        rng = np.random.default_rng(6)
        fg, alpha = gen_foreground("disc", 64, rng)
        bg = gen_background(64, rng)
        s = make_sample(fg, alpha, bg, (0, 0))
        np.testing.assert_array_equal(s.trimap_in, derive_optimal_trimap(s.alpha_gt))

    def test_alpha_one_everywhere(self):
        rng = np.random.default_rng(7)
        fg = rng.random((16, 16, 3))
        bg = rng.random((16, 16, 3))
        s = make_sample(fg, np.ones((16, 16)), bg, (0, 0))
        np.testing.assert_array_equal(s.image, s.fg)
        assert (s.trimap_in == FG).all()

    def test_composite_identity_exact(self):
        rng = np.random.default_rng(8)
        s = synth_sample(64, rng)
        np.testing.assert_array_equal(s.image, composite(s.fg, s.bg, s.alpha_gt))

    def test_extent_mismatch(self):
        with pytest.raises(ValueError):
            make_sample(np.zeros((8, 8, 3)), np.zeros((9, 8)), np.zeros((8, 8, 3)), (0, 0))

    def test_unknown_grows_with_radii(self):
        rng = np.random.default_rng(9)
        fg, alpha = gen_foreground("disc", 64, rng)
        bg = gen_background(64, rng)
        small = make_sample(fg, alpha, bg, (1, 1))
        big = make_sample(fg, alpha, bg, (6, 6))
        assert (big.trimap_in == UNKNOWN).sum() > (small.trimap_in == UNKNOWN).sum()

    def test_meta_records_radii(self):
        rng = np.random.default_rng(10)
        s = synth_sample(64, rng, degrade_range=(2, 4))
        r = s.meta["degrade_radii"]
        assert 2 <= r[0] <= 4 and 2 <= r[1] <= 4


class TestCrop:
    def _sample(self, seed=11, size=64):
        return synth_sample(size, np.random.default_rng(seed))

    def test_full_size_crop_is_identity(self):
        s = self._sample()
        rng = np.random.default_rng(12)
        c = crop_on_unknown(s, 64, rng)
        np.testing.assert_array_equal(c.image, s.image)
        np.testing.assert_array_equal(c.trimap_in, s.trimap_in)

    def test_single_unknown_pixel_centers_window(self):
        tri = np.full((32, 32), FG, dtype=np.uint8)
        tri[20, 9] = UNKNOWN
        s = SampleRecord(image=np.zeros((32, 32, 3)), trimap_in=tri,
                         alpha_gt=np.ones((32, 32)), fg=np.zeros((32, 32, 3)),
                         bg=np.zeros((32, 32, 3)))
        c = crop_on_unknown(s, 8, np.random.default_rng(13))
        assert c.meta["crop_center"] == [20, 9]
        # window [16:24, 5:13] centers on (20, 9)
        assert c.trimap_in[4, 4] == UNKNOWN
        assert c.size == (8, 8)

    def test_oversize_crop_rejected(self):
        s = self._sample()
        with pytest.raises(ValueError):
            crop_on_unknown(s, 65, np.random.default_rng(14))

    def test_no_unknown_falls_back_to_center(self):
        tri = np.full((32, 32), BG, dtype=np.uint8)
        s = SampleRecord(image=np.zeros((32, 32, 3)), trimap_in=tri,
                         alpha_gt=np.zeros((32, 32)), fg=np.zeros((32, 32, 3)),
                         bg=np.zeros((32, 32, 3)))
        c = crop_on_unknown(s, 16, np.random.default_rng(15))
        assert c.meta.get("crop_fallback") is True
        assert c.meta["crop_center"] == [16, 16]

    def test_centers_uniform_over_unknown(self):
        # chi-squared sanity on the empirical center distribution
        tri = np.full((16, 16), BG, dtype=np.uint8)
        rng_setup = np.random.default_rng(16)
        pts = rng_setup.choice(256, size=40, replace=False)
        tri[np.unravel_index(pts, (16, 16))] = UNKNOWN
        s = SampleRecord(image=np.zeros((16, 16, 3)), trimap_in=tri,
                         alpha_gt=np.zeros((16, 16)), fg=np.zeros((16, 16, 3)),
                         bg=np.zeros((16, 16, 3)))
        rng = np.random.default_rng(17)
        n = 10_000
        counts = {}
        for _ in range(n):
            c = crop_on_unknown(s, 8, rng)
            key = tuple(c.meta["crop_center"])
            counts[key] = counts.get(key, 0) + 1
        assert set(counts) <= {tuple(p) for p in np.argwhere(tri == UNKNOWN)}
        assert len(counts) == 40
        exp = n / 40
        chi2 = sum((obs - exp) ** 2 / exp for obs in counts.values())
        # dof=39; far beyond the 99.9% quantile (~70) means a broken sampler
        assert chi2 < 80.0

    def test_resize_to_out_size(self):
        s = self._sample()
        c = crop_on_unknown(s, 32, np.random.default_rng(18), out_size=64)
        assert c.size == (64, 64)
        assert c.image.shape == (64, 64, 3)
        np.testing.assert_array_equal(c.image, composite(c.fg, c.bg, c.alpha_gt))


class TestAugment:
    def _sample(self, seed=19):
        return synth_sample(64, np.random.default_rng(seed))

    def test_disabled_is_identity(self):
        s = self._sample()
        cfg = AugmentConfig.disabled()
        a = augment(s, cfg, np.random.default_rng(20))
        np.testing.assert_allclose(a.alpha_gt, s.alpha_gt, atol=1e-6)
        np.testing.assert_allclose(a.fg, s.fg, atol=1e-6)
        np.testing.assert_array_equal(a.trimap_in, s.trimap_in)

    def test_double_flip_identity(self):
        s = self._sample()
        cfg = AugmentConfig(flip_prob=1.0, scale_range=(1.0, 1.0),
                            rotation_range=(0.0, 0.0))
        a = augment(s, cfg, np.random.default_rng(21))
        b = augment(a, cfg, np.random.default_rng(22))
        np.testing.assert_allclose(b.alpha_gt, s.alpha_gt, atol=1e-9)
        np.testing.assert_array_equal(b.trimap_in, s.trimap_in)
        assert not np.allclose(a.alpha_gt, s.alpha_gt)  # flip moved things

    def test_alpha_in_range_and_labels_legal(self):
        rng = np.random.default_rng(23)
        cfg = AugmentConfig()
        for seed in range(5):
            a = augment(self._sample(seed), cfg, rng)
            assert a.alpha_gt.min() >= 0.0 and a.alpha_gt.max() <= 1.0
            assert np.isin(a.trimap_in, [BG, UNKNOWN, FG]).all()

    def test_composite_identity_survives(self):
        a = augment(self._sample(), AugmentConfig(), np.random.default_rng(24))
        np.testing.assert_array_equal(a.image, composite(a.fg, a.bg, a.alpha_gt))

    def test_meta_records_transform(self):
        a = augment(self._sample(), AugmentConfig(), np.random.default_rng(25))
        rec = a.meta["augment"]
        assert 0.75 <= rec["scale"] <= 1.5 and -45 <= rec["rotation_deg"] <= 45

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            AugmentConfig(crop_min=100, crop_max=50)
        with pytest.raises(ValueError):
            AugmentConfig(flip_prob=1.5)


class TestDataset:
    def test_write_read_round_trip(self, tmp_path):
        d = tmp_path / "ds"
        man = write_dataset(d, 3, seed=99, size=32)
        assert man["count"] == 3
        samples, man2 = read_dataset(d)
        assert man2 == read_manifest(d)
        assert len(samples) == 3
        for s in samples:
            assert s.image.shape == (32, 32, 3)
            assert np.isin(s.trimap_in, [BG, UNKNOWN, FG]).all()

    def test_composite_within_one_quantization_step(self, tmp_path):
        d = tmp_path / "ds"
        write_dataset(d, 4, seed=7, size=32)
        for i in range(4):
            s = read_sample(d, i)
            recon = composite(s.fg, s.bg, s.alpha_gt)
            assert np.abs(recon - s.image).max() <= 0.5 / 255 + 1e-12

    def test_same_seed_byte_identical(self, tmp_path):
        d1 = tmp_path / "a"
        d2 = tmp_path / "b"
        write_dataset(d1, 4, seed=5, size=32, kind="mixed")
        write_dataset(d2, 4, seed=5, size=32, kind="mixed")
        files1 = sorted(p.name for p in d1.iterdir())
        files2 = sorted(p.name for p in d2.iterdir())
        assert files1 == files2
        for name in files1:
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name

    def test_different_seed_differs(self, tmp_path):
        d1 = tmp_path / "a"
        d2 = tmp_path / "b"
        write_dataset(d1, 1, seed=1, size=32)
        write_dataset(d2, 1, seed=2, size=32)
        assert (d1 / "0000_image.ppm").read_bytes() != (d2 / "0000_image.ppm").read_bytes()

    def test_mixed_kind_alternates(self, tmp_path):
        # even indices are discs, odd are strands, each generated from the
        # per-sample stream [seed, i]; reproduce sample 1 independently.
        d = tmp_path / "ds"
        write_dataset(d, 2, seed=3, size=32, kind="mixed", hard_frac=0.25)
        s1 = read_sample(d, 1)
        rng = np.random.default_rng([3, 1])
        hard = bool(rng.random() < 0.25)
        expect = synth_sample(32, rng, kind="strands", hard=hard, degrade_range=(3, 8))
        assert np.abs(expect.alpha_gt - s1.alpha_gt).max() <= 0.5 / 255 + 1e-12
        np.testing.assert_array_equal(expect.trimap_in, s1.trimap_in)
