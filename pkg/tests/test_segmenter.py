import math

import numpy as np
import pytest

from pseudomask.imaging import BinaryMask, ImageRgb, Rect, resample_nearest
from pseudomask.pipeline import Instance, initialize_pseudo_masks
from pseudomask.segmenter import (FEATURE_DIM, ROI_GRID, SegmenterConfig,
                                  SegmenterParams, assemble_roi,
                                  assemble_roi_logits, box_line_targets,
                                  jitter_box, load_params, loss_1d_arrays,
                                  loss_2d_arrays, pixel_features, predict_rois,
                                  project_1d, save_params, score_maps, train)


def rand_image(rng, h=24, w=24):
    return ImageRgb(rng.integers(0, 256, (h, w, 3)).astype(np.uint8))


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class TestFeatures:
    def test_black_origin_pixel(self):
        img = ImageRgb(np.zeros((4, 4, 3), dtype=np.uint8))
        f = pixel_features(img)
        assert f.shape == (4, 4, FEATURE_DIM)
        assert np.all(f[0, 0, 0:5] == 0)
        assert f[0, 0, 5] == 0 and f[0, 0, 6] == 0 and f[0, 0, 7] == 0
        assert f[0, 0, 8] == 1.0

    def test_constant_image_only_positional_channels_vary(self):
        img = ImageRgb(np.full((6, 6, 3), 77, dtype=np.uint8))
        f = pixel_features(img)
        for c in range(5):
            assert np.ptp(f[:, :, c]) == 0
        assert np.ptp(f[:, :, 5]) > 0 and np.ptp(f[:, :, 6]) > 0

    def test_range_audit(self):
        rng = np.random.default_rng(50)
        f = pixel_features(rand_image(rng))
        assert f.min() >= 0.0 and f.max() <= 1.0


class TestScoreMaps:
    def test_zero_params(self):
        img = ImageRgb(np.full((5, 5, 3), 10, dtype=np.uint8))
        params = SegmenterParams.zeros(2, 1)
        maps = score_maps(pixel_features(img), params)
        assert maps.shape == (4, 5, 5)
        assert np.all(maps == 0)

    def test_bias_carrier_only(self):
        rng = np.random.default_rng(51)
        img = rand_image(rng, 6, 7)
        params = SegmenterParams.zeros(1, 1)
        params.weights[0, 8] = 0.4
        params.biases[0] = 0.1
        maps = score_maps(pixel_features(img), params)
        assert np.allclose(maps[0], 0.5)

    def test_dot_product_oracle(self):
        rng = np.random.default_rng(52)
        img = rand_image(rng, 3, 3)
        f = pixel_features(img)
        params = SegmenterParams(k=1, num_classes=2,
                                 weights=rng.normal(size=(2, FEATURE_DIM)),
                                 biases=rng.normal(size=2))
        maps = score_maps(f, params)
        for m in range(2):
            for y in range(3):
                for x in range(3):
                    expect = float(params.weights[m] @ f[y, x] + params.biases[m])
                    assert maps[m, y, x] == pytest.approx(expect)


def assembly_oracle(maps, roi, class_id, k):
    """Independent index-arithmetic reimplementation of ROI assembly."""
    h, w = maps.shape[1:]
    out = np.empty((ROI_GRID, ROI_GRID))
    for v in range(ROI_GRID):
        for u in range(ROI_GRID):
            ci = (u * k) // ROI_GRID
            cj = (v * k) // ROI_GRID
            m = class_id * k * k + cj * k + ci
            x = roi.x0 + (u + 0.5) * roi.width / ROI_GRID - 0.5
            y = roi.y0 + (v + 0.5) * roi.height / ROI_GRID - 0.5
            x0 = min(max(int(math.floor(x)), 0), w - 1)
            y0 = min(max(int(math.floor(y)), 0), h - 1)
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            wx = min(max(x - x0, 0.0), 1.0)
            wy = min(max(y - y0, 0.0), 1.0)
            logit = ((1 - wy) * ((1 - wx) * maps[m, y0, x0] + wx * maps[m, y0, x1])
                     + wy * ((1 - wx) * maps[m, y1, x0] + wx * maps[m, y1, x1]))
            out[v, u] = 1.0 / (1.0 + math.exp(-logit))
    return out


class TestAssembleRoi:
    def test_k1_is_plain_crop_resample(self):
        rng = np.random.default_rng(53)
        maps = rng.normal(size=(1, 16, 16))
        roi = Rect(2, 3, 12, 13)
        pred = assemble_roi(maps, roi, 0, 1, 1)
        from pseudomask.imaging import RealMap, resample_bilinear
        expect = resample_bilinear(RealMap(maps[0]), roi, ROI_GRID, ROI_GRID)
        assert np.allclose(pred.fg28, sigmoid(expect.values))

    def test_constant_maps_blockwise(self):
        k = 2
        maps = np.zeros((k * k, 20, 20))
        for m in range(k * k):
            maps[m] = float(m)
        pred = assemble_roi(maps, Rect(0, 0, 20, 20), 0, k, 1)
        # cell (i, j) of the grid reads map j*k+i
        for v in (0, 27):
            for u in (0, 27):
                m = (v * k // 28) * k + (u * k // 28)
                assert pred.fg28[v, u] == pytest.approx(sigmoid(float(m)))

    @pytest.mark.parametrize("k", [1, 2, 7])
    def test_matches_index_oracle(self, k):
        rng = np.random.default_rng(54 + k)
        num_classes = 2
        maps = rng.normal(size=(k * k * num_classes, 18, 22))
        roi = Rect(3, 1, 17, 15)
        for class_id in range(num_classes):
            pred = assemble_roi(maps, roi, class_id, k, num_classes)
            expect = assembly_oracle(maps, roi, class_id, k)
            assert np.allclose(pred.fg28, expect)

    def test_depends_only_on_own_class_maps(self):
        rng = np.random.default_rng(60)
        k, c = 3, 2
        maps = rng.normal(size=(k * k * c, 16, 16))
        roi = Rect(2, 2, 14, 14)
        before = assemble_roi(maps, roi, 0, k, c).fg28
        maps2 = maps.copy()
        maps2[k * k:] += rng.normal(size=(k * k, 16, 16))
        after = assemble_roi(maps2, roi, 0, k, c).fg28
        assert np.array_equal(before, after)


class TestLoss2d:
    def test_saturated_correct(self):
        rng = np.random.default_rng(55)
        t = (rng.random((28, 28)) > 0.5).astype(np.uint8)
        logits = np.where(t == 1, 20.0, -20.0)
        loss, _ = loss_2d_arrays(sigmoid(logits), t)
        assert loss < 1e-6

    def test_uniform_half(self):
        t = np.zeros((28, 28), dtype=np.uint8)
        loss, _ = loss_2d_arrays(np.full((28, 28), 0.5), t)
        assert loss == pytest.approx(math.log(2))

    def test_single_position_contribution(self):
        # t=1, p=0.25 contributes -log 0.25 before averaging
        t = np.zeros((28, 28), dtype=np.uint8)
        t[3, 4] = 1
        p = np.full((28, 28), 1e-12)
        p[3, 4] = 0.25
        loss, _ = loss_2d_arrays(p, t)
        assert loss * 784 == pytest.approx(-math.log(0.25), rel=1e-6)

    def test_gradient_formula(self):
        rng = np.random.default_rng(56)
        p = rng.random((28, 28))
        t = (rng.random((28, 28)) > 0.5).astype(np.uint8)
        _, grad = loss_2d_arrays(p, t)
        assert np.allclose(grad, (p - t) / 784)


class TestProject1d:
    def test_zeros(self):
        rows, cols = project_1d(np.zeros((28, 28)))
        assert np.all(rows == 0) and np.all(cols == 0)

    def test_single_spike(self):
        m = np.zeros((28, 28))
        m[5, 9] = 1.0
        rows, cols = project_1d(m)
        assert rows[5] == 1.0 and rows.sum() == 1.0
        assert cols[9] == 1.0 and cols.sum() == 1.0

    def test_global_max_property(self):
        rng = np.random.default_rng(57)
        m = rng.random((28, 28))
        rows, cols = project_1d(m)
        assert rows.max() == pytest.approx(m.max())
        assert cols.max() == pytest.approx(m.max())

    def test_monotone(self):
        rng = np.random.default_rng(58)
        m = rng.random((28, 28))
        r1, c1 = project_1d(m)
        r2, c2 = project_1d(m + 0.25)
        assert np.all(r2 >= r1) and np.all(c2 >= c1)


class TestLoss1d:
    def test_roi_equals_box_all_targets_one(self):
        box = Rect(4, 6, 20, 26)
        t_rows, t_cols = box_line_targets(box, box)
        assert np.all(t_rows == 1) and np.all(t_cols == 1)

    def test_margin_rows_are_background(self):
        roi = Rect(0, 0, 30, 30)
        box = Rect(10, 10, 20, 20)
        t_rows, t_cols = box_line_targets(roi, box)
        assert t_rows[0] == 0 and t_rows[-1] == 0
        assert t_cols[0] == 0 and t_cols[-1] == 0
        assert t_rows.sum() > 0 and t_cols.sum() > 0

    def test_saturated_match_near_zero_loss(self):
        roi = Rect(0, 0, 30, 30)
        box = Rect(10, 10, 20, 20)
        t_rows, t_cols = box_line_targets(roi, box)
        logits = np.full((28, 28), -20.0)
        logits[np.ix_(np.nonzero(t_rows)[0], np.nonzero(t_cols)[0])] = 20.0
        loss, _ = loss_1d_arrays(sigmoid(logits), roi, box)
        assert loss < 1e-6


class TestGradientChecks:
    def finite_diff(self, loss_fn, logits, eps=1e-5):
        g = np.zeros_like(logits)
        for v in range(logits.shape[0]):
            for u in range(logits.shape[1]):
                lo = logits.copy()
                hi = logits.copy()
                lo[v, u] -= eps
                hi[v, u] += eps
                g[v, u] = (loss_fn(hi) - loss_fn(lo)) / (2 * eps)
        return g

    def rel_err(self, a, b):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
        return np.abs(a - b) / denom

    def test_loss_2d_matches_finite_differences(self):
        rng = np.random.default_rng(59)
        for _ in range(5):
            logits = rng.normal(size=(28, 28))
            t = (rng.random((28, 28)) > 0.5).astype(np.uint8)
            _, grad = loss_2d_arrays(sigmoid(logits), t)
            fd = self.finite_diff(lambda z: loss_2d_arrays(sigmoid(z), t)[0], logits)
            assert self.rel_err(grad, fd).max() < 1e-4

    def test_loss_1d_matches_finite_differences_away_from_ties(self):
        rng = np.random.default_rng(61)
        roi = Rect(0, 0, 30, 30)
        box = Rect(8, 9, 22, 25)
        for _ in range(5):
            logits = rng.normal(size=(28, 28))
            _, grad = loss_1d_arrays(sigmoid(logits), roi, box)
            fd = self.finite_diff(
                lambda z: loss_1d_arrays(sigmoid(z), roi, box)[0], logits)
            # continuous random logits: exact max ties have measure zero
            assert self.rel_err(grad, fd).max() < 1e-4


class TestTraining:
    def tiny_dataset(self, rng):
        data = np.full((24, 24, 3), 200, dtype=np.uint8)
        data[6:18, 8:20] = (150, 30, 40)
        img = ImageRgb(data)
        inst = Instance(image_index=0, class_id=0, box=Rect(8, 6, 20, 18))
        masks = initialize_pseudo_masks([inst], [img])
        return [img], [inst], [masks[0].mask]

    def test_zero_epochs_returns_zero_params(self):
        rng = np.random.default_rng(62)
        images, instances, masks = self.tiny_dataset(rng)
        cfg = SegmenterConfig(num_classes=1, epochs=0, seed=1)
        params, trace = train(images, instances, masks, cfg)
        assert np.all(params.weights == 0) and np.all(params.biases == 0)
        assert trace == []

    def test_loss_decreases(self):
        rng = np.random.default_rng(63)
        images, instances, masks = self.tiny_dataset(rng)
        cfg = SegmenterConfig(num_classes=1, epochs=25, seed=1,
                              learning_rate=4.0)
        params, trace = train(images, instances, masks, cfg)
        first = trace[0][1] + trace[0][2]
        last = trace[-1][1] + trace[-1][2]
        assert last < first

    def test_reproducible(self):
        rng = np.random.default_rng(64)
        images, instances, masks = self.tiny_dataset(rng)
        cfg = SegmenterConfig(num_classes=1, epochs=3, seed=9)
        p1, t1 = train(images, instances, masks, cfg)
        p2, t2 = train(images, instances, masks, cfg)
        assert np.array_equal(p1.weights, p2.weights)
        assert np.array_equal(p1.biases, p2.biases)
        assert t1 == t2

    def test_empty_dataset_rejected(self):
        cfg = SegmenterConfig(num_classes=1)
        with pytest.raises(ValueError):
            train([], [], [], cfg)


class TestPredict:
    def test_zero_params_gives_half(self):
        img = ImageRgb(np.zeros((20, 20, 3), dtype=np.uint8))
        params = SegmenterParams.zeros(7, 2)
        preds = predict_rois(img, params, [(Rect(2, 2, 18, 18), 0)])
        assert np.allclose(preds[0].fg28, 0.5)

    def test_identical_rois_identical_predictions(self):
        rng = np.random.default_rng(65)
        img = rand_image(rng)
        params = SegmenterParams(k=2, num_classes=1,
                                 weights=rng.normal(size=(4, FEATURE_DIM)),
                                 biases=rng.normal(size=4))
        roi = Rect(3, 4, 19, 20)
        a, b = predict_rois(img, params, [(roi, 0), (roi, 0)])
        assert np.array_equal(a.fg28, b.fg28)
        assert np.all((a.fg28 > 0) & (a.fg28 < 1))


class TestJitter:
    def test_jitter_overlaps_and_stays_in_bounds(self):
        rng = np.random.default_rng(66)
        box = Rect(10, 10, 40, 40)
        bounds = Rect(0, 0, 50, 50)
        cfg = SegmenterConfig(num_classes=1)
        from pseudomask.energy import iou
        for _ in range(50):
            j = jitter_box(rng, box, bounds, cfg)
            assert bounds.contains(j)
            assert iou(j, box) > 0.5


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(67)
        params = SegmenterParams(k=7, num_classes=3,
                                 weights=rng.normal(size=(147, FEATURE_DIM)),
                                 biases=rng.normal(size=147))
        save_params(params, tmp_path / "p.pmsk")
        back = load_params(tmp_path / "p.pmsk")
        assert back.k == 7 and back.num_classes == 3
        assert np.array_equal(back.weights, params.weights)
        assert np.array_equal(back.biases, params.biases)

    def test_header(self, tmp_path):
        params = SegmenterParams.zeros(2, 1)
        save_params(params, tmp_path / "p.pmsk")
        raw = (tmp_path / "p.pmsk").read_bytes()
        assert raw[:4] == b"PMSK"
        assert len(raw) == 4 + 16 + 8 * (4 * FEATURE_DIM) + 8 * 4

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "bad.pmsk").write_bytes(b"XXXX" + b"\0" * 32)
        with pytest.raises(ValueError):
            load_params(tmp_path / "bad.pmsk")
