import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from putt.data import (
    Grid,
    GridFormatError,
    NoiseSpec,
    add_noise,
    build_pyramid,
    bundled_image_path,
    downsample_avg,
    load_grid,
    masked_avg_pool,
    random_mask,
    read_netpbm,
    save_grid,
    save_mask,
    write_pgm,
)


class TestGrid:
    def test_rejects_non_power_of_two(self):
        with pytest.raises(GridFormatError):
            Grid(np.zeros((33, 32)))

    def test_rejects_nan(self):
        with pytest.raises(GridFormatError):
            Grid(np.full((2, 2), np.nan))

    def test_mask_shape(self):
        with pytest.raises(GridFormatError):
            Grid(np.zeros((4, 4)), np.ones((2, 2), dtype=bool))

    def test_observed_default(self):
        assert Grid(np.zeros((4, 4))).observed.all()


class TestIO:
    def test_pgm_round_trip(self, tmp_path, rng):
        g = rng.uniform(size=(32, 32))
        save_grid(Grid(g), tmp_path / "a.pgm")
        back = load_grid(tmp_path / "a.pgm")
        assert np.abs(back.values - g).max() <= 1 / 65535

    def test_volume_round_trip(self, tmp_path, rng):
        g = rng.uniform(size=(8, 8, 8))
        save_grid(Grid(g), tmp_path / "v.raw")
        assert json.loads((tmp_path / "v.json").read_text()) == {"dims": [8, 8, 8]}
        back = load_grid(tmp_path / "v.raw")
        assert np.abs(back.values - g).max() <= 1e-7

    def test_rejects_non_power_of_two_file(self, tmp_path):
        write_pgm(tmp_path / "bad.pgm", np.zeros((33, 32)))
        with pytest.raises(GridFormatError, match="power"):
            load_grid(tmp_path / "bad.pgm")

    def test_8bit_pgm_with_comment(self, tmp_path):
        raster = bytes([0, 51, 102, 255])
        (tmp_path / "c.pgm").write_bytes(b"P5\n# comment\n2 2\n255\n" + raster)
        np.testing.assert_allclose(load_grid(tmp_path / "c.pgm").values, [[0, 0.2], [0.4, 1.0]])

    def test_16bit_is_big_endian(self, tmp_path):
        (tmp_path / "b.pgm").write_bytes(b"P5 1 1 65535\n" + bytes([0x01, 0x00]))
        raw, maxval = read_netpbm(tmp_path / "b.pgm")
        assert raw[0, 0] == 256 and maxval == 65535

    def test_ppm_luma(self, tmp_path):
        rgb = np.array([[[255, 0, 0], [0, 255, 0]], [[0, 0, 255], [255, 255, 255]]], dtype=np.uint8)
        (tmp_path / "c.ppm").write_bytes(b"P6\n2 2\n255\n" + rgb.tobytes())
        np.testing.assert_allclose(load_grid(tmp_path / "c.ppm").values, [[0.299, 0.587], [0.114, 1.0]])

    def test_truncated_raster(self, tmp_path):
        (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(3))
        with pytest.raises(GridFormatError):
            load_grid(tmp_path / "t.pgm")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(GridFormatError):
            load_grid(tmp_path / "x.pgm")

    def test_missing_sidecar(self, tmp_path):
        np.zeros(8, dtype="<f4").tofile(tmp_path / "v.raw")
        with pytest.raises(GridFormatError):
            load_grid(tmp_path / "v.raw")

    def test_values_clamped(self, tmp_path):
        np.array([-0.5, 0.5, 1.5, 0.25], dtype="<f4").tofile(tmp_path / "v.raw")
        (tmp_path / "v.json").write_text('{"dims": [2, 2]}')
        np.testing.assert_array_equal(load_grid(tmp_path / "v.raw").values, [[0, 0.5], [1, 0.25]])

    def test_mask_file(self, tmp_path):
        m = np.zeros((4, 4), dtype=bool)
        m[1, 2] = True
        save_mask(m, tmp_path / "m.pgm")
        write_pgm(tmp_path / "a.pgm", np.full((4, 4), 0.5))
        g = load_grid(tmp_path / "a.pgm", tmp_path / "m.pgm")
        np.testing.assert_array_equal(g.mask, m)

    def test_bundled_image(self):
        g = load_grid(bundled_image_path())
        assert g.shape == (256, 256)
        assert 0.0 <= g.values.min() and g.values.max() <= 1.0


class TestPooling:
    def test_downsample_example(self):
        np.testing.assert_array_equal(downsample_avg(Grid(np.array([[1.0, 3.0], [5.0, 7.0]]))).values, [[4.0]])

    def test_constant(self):
        np.testing.assert_array_equal(downsample_avg(Grid(np.full((8, 8, 8), 0.3))).values, 0.3)

    def test_mean_preserved(self, rng):
        g = Grid(rng.integers(0, 256, size=(16, 16)) / 256.0)
        assert downsample_avg(g).values.mean() == g.values.mean()

    def test_masked_example(self):
        g = Grid(np.array([[2.0, 2.0], [0.0, 0.0]]), np.array([[True, True], [False, False]]))
        out = masked_avg_pool(g)
        assert out.values[0, 0] == 2.0 and out.mask[0, 0]

    def test_masked_full_equals_plain(self, rng):
        v = rng.uniform(size=(8, 8))
        np.testing.assert_array_equal(
            masked_avg_pool(Grid(v, np.ones((8, 8), dtype=bool))).values, downsample_avg(Grid(v)).values
        )

    def test_masked_empty_block(self):
        g = Grid(np.full((2, 2), 0.7), np.zeros((2, 2), dtype=bool))
        out = masked_avg_pool(g)
        assert out.values[0, 0] == 0.0 and not out.mask[0, 0]

    def test_masked_needs_mask(self):
        with pytest.raises(ValueError):
            masked_avg_pool(Grid(np.zeros((2, 2))))


class TestPyramid:
    def test_levels_zero(self, rng):
        g = Grid(rng.uniform(size=(8, 8)))
        (only,) = build_pyramid(g, 0)
        assert only is g

    def test_sides(self):
        pyr = build_pyramid(Grid(np.zeros((512, 512))), 2)
        assert [p.shape[0] for p in pyr] == [128, 256, 512]

    def test_too_many_levels(self):
        with pytest.raises(ValueError):
            build_pyramid(Grid(np.zeros((8, 8))), 3)

    @pytest.mark.parametrize("seed", range(5))
    def test_masked_observed_fraction_grows(self, seed):
        m = random_mask((64, 64), 0.05, seed)
        pyr = build_pyramid(Grid(np.zeros((64, 64)), m), 4)
        fracs = [p.observed.mean() for p in pyr]
        assert all(a >= b for a, b in zip(fracs, fracs[1:]))


class TestNoise:
    def test_zero_scale(self, rng):
        g = Grid(rng.uniform(size=(8, 8)))
        np.testing.assert_array_equal(add_noise(g, NoiseSpec("gaussian", 0.0)).values, g.values)

    def test_gaussian_std(self):
        out = add_noise(Grid(np.zeros((256, 256))), NoiseSpec("gaussian", 0.3, 1)).values
        n = out.size
        assert abs(out.std() - 0.3) <= 3 * 0.3 / np.sqrt(2 * n)
        assert abs(out.mean()) <= 3 * 0.3 / np.sqrt(n)

    def test_laplace_variance(self):
        b = 0.2
        out = add_noise(Grid(np.zeros((256, 256))), NoiseSpec("laplace", b, 2)).values
        n = out.size
        # Var of the sample variance for Laplace: (mu4 - sigma^4) / n with mu4 = 24 b^4
        se = np.sqrt((24 * b**4 - (2 * b**2) ** 2) / n)
        assert abs(out.var() - 2 * b**2) <= 3 * se

    def test_not_clamped(self):
        out = add_noise(Grid(np.full((32, 32), 0.95)), NoiseSpec("gaussian", 0.5, 0)).values
        assert out.max() > 1.0 and out.min() < 0.0

    def test_seeded(self):
        g = Grid(np.zeros((8, 8)))
        a = add_noise(g, NoiseSpec("gaussian", 0.1, 5)).values
        np.testing.assert_array_equal(a, add_noise(g, NoiseSpec("gaussian", 0.1, 5)).values)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            NoiseSpec("poisson", 0.1)
        with pytest.raises(ValueError):
            NoiseSpec("gaussian", -1.0)


class TestRandomMask:
    def test_full(self):
        assert random_mask((8, 8), 1.0).all()

    def test_count(self):
        assert random_mask((256, 256), 0.1, 3).sum() == 6554

    def test_seeded(self):
        np.testing.assert_array_equal(random_mask((32, 32), 0.3, 9), random_mask((32, 32), 0.3, 9))

    def test_invalid(self):
        with pytest.raises(ValueError):
            random_mask((4, 4), 1.2)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 1), st.integers(0, 1000))
    def test_count_property(self, p, seed):
        assert random_mask((16, 16), p, seed).sum() == round(p * 256)
