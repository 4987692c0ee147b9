import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pseudomask.imaging import (BinaryMask, ImageRgb, RealMap, Rect,
                                enlarge_box, gradients, read_image, read_mask,
                                resample_bilinear, resample_nearest,
                                to_grayscale, write_image, write_mask)


def solid(h, w, rgb):
    return ImageRgb(np.full((h, w, 3), rgb, dtype=np.uint8))


class TestGrayscale:
    def test_black(self):
        assert np.all(to_grayscale(solid(4, 4, 0)).values == 0.0)

    def test_white(self):
        g = to_grayscale(solid(4, 4, 255))
        assert np.allclose(g.values, 1.0)

    def test_pure_red(self):
        img = ImageRgb(np.zeros((2, 2, 3), dtype=np.uint8))
        img.data[..., 0] = 255
        assert np.allclose(to_grayscale(img).values, 0.299)


class TestGradients:
    def test_constant(self):
        gx, gy = gradients(RealMap(np.full((5, 7), 0.3)))
        assert np.all(gx.values == 0) and np.all(gy.values == 0)

    def test_ramp(self):
        w = 8
        g = RealMap(np.tile(np.arange(w) / w, (4, 1)))
        gx, gy = gradients(g)
        assert np.allclose(gx.values, 1.0 / w)
        assert np.all(gy.values == 0)

    def test_matches_difference_oracle(self):
        rng = np.random.default_rng(3)
        v = rng.random((5, 5))
        gx, gy = gradients(RealMap(v))
        for y in range(5):
            for x in range(5):
                if x == 0:
                    ex = v[y, 1] - v[y, 0]
                elif x == 4:
                    ex = v[y, 4] - v[y, 3]
                else:
                    ex = (v[y, x + 1] - v[y, x - 1]) / 2
                assert gx.values[y, x] == pytest.approx(ex)
                if y == 0:
                    ey = v[1, x] - v[0, x]
                elif y == 4:
                    ey = v[4, x] - v[3, x]
                else:
                    ey = (v[y + 1, x] - v[y - 1, x]) / 2
                assert gy.values[y, x] == pytest.approx(ey)


class TestResampleBilinear:
    def test_identity(self):
        rng = np.random.default_rng(5)
        m = RealMap(rng.random((6, 9)))
        out = resample_bilinear(m, m.bounds, 9, 6)
        assert np.allclose(out.values, m.values)

    def test_constant(self):
        m = RealMap(np.full((4, 4), 0.7))
        out = resample_bilinear(m, Rect(1, 1, 3, 3), 8, 5)
        assert np.allclose(out.values, 0.7)

    def test_checkerboard_hand_computed(self):
        # 2x2 checkerboard [[0,1],[1,0]] upsampled to 4x4, pixel centers:
        # sample xs = [-0.25, 0.25, 0.75, 1.25] clamped bilinear
        m = RealMap(np.array([[0.0, 1.0], [1.0, 0.0]]))
        out = resample_bilinear(m, m.bounds, 4, 4)
        xs = np.clip([-0.25, 0.25, 0.75, 1.25], 0, 1)
        expect = np.empty((4, 4))
        for v, y in enumerate(xs):
            for u, x in enumerate(xs):
                expect[v, u] = (x * (1 - y) + (1 - x) * y)
        assert np.allclose(out.values, expect)

    def test_degenerate_src_rejected(self):
        m = RealMap(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            resample_bilinear(m, Rect(-4, -4, -1, -1), 2, 2)

    def test_no_nan(self):
        rng = np.random.default_rng(8)
        m = RealMap(rng.random((7, 7)))
        out = resample_bilinear(m, Rect(2, 1, 6, 7), 13, 3)
        assert np.all(np.isfinite(out.values))


class TestResampleNearest:
    def test_constant(self):
        m = BinaryMask(np.ones((4, 4), dtype=np.uint8))
        assert np.all(resample_nearest(m, m.bounds, 3, 7).bits == 1)

    def test_identity(self):
        rng = np.random.default_rng(2)
        m = BinaryMask((rng.random((5, 6)) > 0.5).astype(np.uint8))
        out = resample_nearest(m, m.bounds, 6, 5)
        assert np.array_equal(out.bits, m.bits)

    def test_downsample_center_sample_oracle(self):
        rng = np.random.default_rng(4)
        m = BinaryMask((rng.random((4, 4)) > 0.5).astype(np.uint8))
        out = resample_nearest(m, m.bounds, 2, 2)
        # sample points at 0.5 and 2.5 -> nearest pixels 1 and 3
        expect = m.bits[np.ix_([1, 3], [1, 3])]
        assert np.array_equal(out.bits, expect)

    def test_output_binary(self):
        rng = np.random.default_rng(6)
        m = BinaryMask((rng.random((9, 9)) > 0.3).astype(np.uint8))
        out = resample_nearest(m, Rect(1, 2, 8, 9), 28, 28)
        assert set(np.unique(out.bits)) <= {0, 1}


class TestEnlargeBox:
    def test_factor_zero_identity(self):
        b = Rect(3, 4, 10, 12)
        assert enlarge_box(b, 0.0, Rect(0, 0, 20, 20)) == b

    def test_twenty_percent(self):
        out = enlarge_box(Rect(10, 10, 30, 30), 0.2, Rect(0, 0, 100, 100))
        assert out == Rect(8, 8, 32, 32)

    def test_clamped_at_edge(self):
        out = enlarge_box(Rect(0, 0, 20, 20), 0.2, Rect(0, 0, 21, 21))
        assert out == Rect(0, 0, 21, 21)

    @given(st.integers(0, 50), st.integers(0, 50), st.integers(1, 40),
           st.integers(1, 40), st.floats(0, 2))
    def test_containment_property(self, x0, y0, w, h, factor):
        bounds = Rect(0, 0, 100, 100)
        box = Rect(x0, y0, min(100, x0 + w), min(100, y0 + h))
        out = enlarge_box(box, factor, bounds)
        assert out.contains(box)
        assert bounds.contains(out)


class TestPngIo:
    def test_image_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        img = ImageRgb(rng.integers(0, 256, (12, 9, 3)).astype(np.uint8))
        write_image(img, tmp_path / "a.png")
        back = read_image(tmp_path / "a.png")
        assert np.array_equal(back.data, img.data)

    def test_mask_roundtrip(self, tmp_path):
        rng = np.random.default_rng(12)
        m = BinaryMask((rng.random((7, 8)) > 0.5).astype(np.uint8))
        write_mask(m, tmp_path / "m.png")
        back = read_mask(tmp_path / "m.png")
        assert np.array_equal(back.bits, m.bits)


class TestValidation:
    def test_bad_rect(self):
        with pytest.raises(ValueError):
            Rect(5, 0, 5, 3)

    def test_realmap_rejects_nan(self):
        with pytest.raises(ValueError):
            RealMap(np.array([[0.0, math.nan]]))

    def test_mask_rejects_nonbinary(self):
        with pytest.raises(ValueError):
            BinaryMask(np.full((2, 2), 3, dtype=np.uint8))
