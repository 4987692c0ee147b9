"""Position-sensitive pixel segmenter: a linear scorer over handcrafted
per-pixel features producing k^2 * C score maps, per-ROI 28x28 mask
assembly, the 2D mask / 1D box losses, and SGD training against the
current pseudo masks."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .energy import RoiPrediction, iou
from .imaging import BinaryMask, ImageRgb, Rect, gradients, resample_nearest, to_grayscale

ROI_GRID = 28
FEATURE_DIM = 9

_CHECKPOINT_MAGIC = b"PMSK"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SegmenterConfig:
    num_classes: int
    k: int = 7
    learning_rate: float = 8.0
    epochs: int = 30
    batch_rois: int = 64
    seed: int = 0
    jitters_per_instance: int = 8
    jitter_scale_lo: float = 0.7
    jitter_scale_hi: float = 1.3
    jitter_translate: float = 0.2  # fraction of box side
    box_loss_weight: float = 1.0

    def __post_init__(self):
        if self.k < 1 or self.num_classes < 1:
            raise ValueError("k and num_classes must be >= 1")


@dataclass
class SegmenterParams:
    k: int
    num_classes: int
    weights: np.ndarray  # (k*k*C, FEATURE_DIM)
    biases: np.ndarray   # (k*k*C,)

    @classmethod
    def zeros(cls, k: int, num_classes: int) -> "SegmenterParams":
        m = k * k * num_classes
        return cls(k=k, num_classes=num_classes,
                   weights=np.zeros((m, FEATURE_DIM)), biases=np.zeros(m))


@dataclass(frozen=True)
class RoiSample:
    roi: Rect
    matched_instance: int
    class_id: int


def pixel_features(img: ImageRgb) -> np.ndarray:
    """(H, W, 9) features: rgb in [0,1], |gx|, |gy| of grayscale, x/W,
    y/H, their product, and a constant bias carrier."""
    h, w = img.height, img.width
    gray = to_grayscale(img)
    gx, gy = gradients(gray)
    xs = np.arange(w) / w
    ys = np.arange(h) / h
    feat = np.empty((h, w, FEATURE_DIM))
    feat[:, :, 0:3] = img.data / 255.0
    feat[:, :, 3] = np.clip(np.abs(gx.values), 0.0, 1.0)
    feat[:, :, 4] = np.clip(np.abs(gy.values), 0.0, 1.0)
    feat[:, :, 5] = xs[None, :]
    feat[:, :, 6] = ys[:, None]
    feat[:, :, 7] = xs[None, :] * ys[:, None]
    feat[:, :, 8] = 1.0
    return feat


def score_maps(features: np.ndarray, params: SegmenterParams) -> np.ndarray:
    """(k*k*C, H, W) raw logit maps from the 1x1 linear scorer."""
    h, w, d = features.shape
    flat = features.reshape(h * w, d)
    maps = params.weights @ flat.T + params.biases[:, None]
    return maps.reshape(len(params.biases), h, w)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def _roi_sampling(roi: Rect, class_id: int, k: int, num_classes: int,
                  height: int, width: int):
    """Gather indices and bilinear weights for assembling one ROI grid."""
    if not 0 <= class_id < num_classes:
        raise ValueError("class_id out of range")
    u = np.arange(ROI_GRID)
    cell_i = (u * k) // ROI_GRID          # horizontal cell of column u
    cell_j = (u * k) // ROI_GRID          # vertical cell of row v
    m = cell_j[:, None] * k + cell_i[None, :]
    map_idx = class_id * k * k + m

    xs = roi.x0 + (u + 0.5) * (roi.width / ROI_GRID) - 0.5
    ys = roi.y0 + (u + 0.5) * (roi.height / ROI_GRID) - 0.5
    x0 = np.clip(np.floor(xs).astype(int), 0, width - 1)
    y0 = np.clip(np.floor(ys).astype(int), 0, height - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    wx = np.clip(xs - x0, 0.0, 1.0)
    wy = np.clip(ys - y0, 0.0, 1.0)

    X0, Y0 = np.broadcast_to(x0, (ROI_GRID, ROI_GRID)), np.broadcast_to(y0[:, None], (ROI_GRID, ROI_GRID))
    X1, Y1 = np.broadcast_to(x1, (ROI_GRID, ROI_GRID)), np.broadcast_to(y1[:, None], (ROI_GRID, ROI_GRID))
    WX = np.broadcast_to(wx, (ROI_GRID, ROI_GRID))
    WY = np.broadcast_to(wy[:, None], (ROI_GRID, ROI_GRID))
    return map_idx, X0, X1, Y0, Y1, WX, WY


def assemble_roi_logits(maps: np.ndarray, roi: Rect, class_id: int, k: int,
                        num_classes: int):
    """28x28 logits for one ROI plus the sampling context needed to
    scatter gradients back into the score maps."""
    ctx = _roi_sampling(roi, class_id, k, num_classes, maps.shape[1], maps.shape[2])
    map_idx, x0, x1, y0, y1, wx, wy = ctx
    top = maps[map_idx, y0, x0] * (1 - wx) + maps[map_idx, y0, x1] * wx
    bot = maps[map_idx, y1, x0] * (1 - wx) + maps[map_idx, y1, x1] * wx
    logits = top * (1 - wy) + bot * wy
    return logits, ctx


def scatter_logit_grad(ctx, grad28: np.ndarray, dmaps: np.ndarray) -> None:
    """Accumulate d(loss)/d(score maps) for one ROI."""
    map_idx, x0, x1, y0, y1, wx, wy = ctx
    np.add.at(dmaps, (map_idx, y0, x0), grad28 * (1 - wx) * (1 - wy))
    np.add.at(dmaps, (map_idx, y0, x1), grad28 * wx * (1 - wy))
    np.add.at(dmaps, (map_idx, y1, x0), grad28 * (1 - wx) * wy)
    np.add.at(dmaps, (map_idx, y1, x1), grad28 * wx * wy)


def assemble_roi(maps: np.ndarray, roi: Rect, class_id: int, k: int,
                 num_classes: int) -> RoiPrediction:
    logits, _ = assemble_roi_logits(maps, roi, class_id, k, num_classes)
    return RoiPrediction(roi=roi, class_id=class_id, fg28=_sigmoid(logits))


def _bce(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return -(t * np.log(p) + (1.0 - t) * np.log1p(-p))


def loss_2d_arrays(p28: np.ndarray, target28: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-pixel sigmoid cross-entropy over the 28x28 grid; gradient
    is with respect to the pre-sigmoid logits."""
    t = target28.astype(np.float64)
    loss = float(_bce(p28, t).mean())
    grad = (p28 - t) / p28.size
    return loss, grad


def loss_2d(pred: RoiPrediction, target28: BinaryMask) -> tuple[float, np.ndarray]:
    return loss_2d_arrays(pred.fg28, target28.bits)


def project_1d(map28: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max over each scan line: rows[v] = max_u map[v, u], cols[u] = max_v."""
    return map28.max(axis=1), map28.max(axis=0)


def box_line_targets(roi: Rect, gt_box: Rect) -> tuple[np.ndarray, np.ndarray]:
    """1 where the grid line's image scan line intersects the box."""
    u = np.arange(ROI_GRID)
    ys = roi.y0 + (u + 0.5) * (roi.height / ROI_GRID) - 0.5
    xs = roi.x0 + (u + 0.5) * (roi.width / ROI_GRID) - 0.5
    yr = np.floor(ys + 0.5).astype(int)
    xr = np.floor(xs + 0.5).astype(int)
    x_overlap = roi.x0 < gt_box.x1 and gt_box.x0 < roi.x1
    y_overlap = roi.y0 < gt_box.y1 and gt_box.y0 < roi.y1
    t_rows = ((yr >= gt_box.y0) & (yr < gt_box.y1) & x_overlap).astype(np.float64)
    t_cols = ((xr >= gt_box.x0) & (xr < gt_box.x1) & y_overlap).astype(np.float64)
    return t_rows, t_cols


def loss_1d_arrays(p28: np.ndarray, roi: Rect, gt_box: Rect) -> tuple[float, np.ndarray]:
    """Cross-entropy on the row/column max-projections against the box's
    line-intersection indicators; the subgradient routes each projected
    value to its first (raster-order) argmax position."""
    t_rows, t_cols = box_line_targets(roi, gt_box)
    p_rows, p_cols = project_1d(p28)
    total = ROI_GRID * 2
    loss = float(_bce(p_rows, t_rows).sum() + _bce(p_cols, t_cols).sum()) / total

    grad = np.zeros_like(p28)
    arg_u = p28.argmax(axis=1)
    arg_v = p28.argmax(axis=0)
    rows_g = (p_rows - t_rows) / total
    cols_g = (p_cols - t_cols) / total
    np.add.at(grad, (np.arange(ROI_GRID), arg_u), rows_g)
    np.add.at(grad, (arg_v, np.arange(ROI_GRID)), cols_g)
    return loss, grad


def loss_1d(pred: RoiPrediction, gt_box: Rect) -> tuple[float, np.ndarray]:
    return loss_1d_arrays(pred.fg28, pred.roi, gt_box)


def jitter_box(rng: np.random.Generator, box: Rect, bounds: Rect,
               cfg: SegmenterConfig) -> Rect:
    """Random scaled/translated copy of a box, clamped to bounds, kept only
    when it still matches the box (IoU > 0.5); falls back to the box."""
    cx = (box.x0 + box.x1) / 2.0
    cy = (box.y0 + box.y1) / 2.0
    for _ in range(20):
        s = rng.uniform(cfg.jitter_scale_lo, cfg.jitter_scale_hi)
        tx = rng.uniform(-cfg.jitter_translate, cfg.jitter_translate) * box.width
        ty = rng.uniform(-cfg.jitter_translate, cfg.jitter_translate) * box.height
        hw = box.width * s / 2.0
        hh = box.height * s / 2.0
        x0 = max(bounds.x0, int(round(cx + tx - hw)))
        y0 = max(bounds.y0, int(round(cy + ty - hh)))
        x1 = min(bounds.x1, int(round(cx + tx + hw)))
        y1 = min(bounds.y1, int(round(cy + ty + hh)))
        if x1 - x0 >= 2 and y1 - y0 >= 2:
            cand = Rect(x0, y0, x1, y1)
            if iou(cand, box) > 0.5:
                return cand
    return box


def roi_family(rng: np.random.Generator, box: Rect, bounds: Rect,
               cfg: SegmenterConfig) -> list[Rect]:
    """The ground-truth box plus its jittered copies; shared by training
    and refinement-time prediction."""
    rois = [box]
    for _ in range(cfg.jitters_per_instance):
        rois.append(jitter_box(rng, box, bounds, cfg))
    return rois


def train(images: list[ImageRgb], instances, pseudo_masks: list[BinaryMask],
          cfg: SegmenterConfig) -> tuple[SegmenterParams, list[tuple[int, float, float]]]:
    """SGD from zero-initialized parameters against the current pseudo
    masks. Steps group whole images until at least batch_rois ROI samples
    are gathered (image-centric sampling). Returns the final parameters
    and a per-epoch (epoch, loss_2d, loss_1d) trace."""
    if not images or not len(instances):
        raise ValueError("empty dataset")
    if len(pseudo_masks) != len(instances):
        raise ValueError("one pseudo mask per instance required")

    rng = np.random.default_rng(cfg.seed)
    params = SegmenterParams.zeros(cfg.k, cfg.num_classes)
    feats = [pixel_features(img) for img in images]
    flat_feats = [f.reshape(-1, FEATURE_DIM) for f in feats]
    m = cfg.k * cfg.k * cfg.num_classes
    by_image: dict[int, list[int]] = {}
    for idx, inst in enumerate(instances):
        by_image.setdefault(inst.image_index, []).append(idx)
    image_ids = sorted(by_image)
    trace: list[tuple[int, float, float]] = []

    for epoch in range(cfg.epochs):
        samples: dict[int, list[RoiSample]] = {}
        for img_idx in image_ids:
            bounds = images[img_idx].bounds
            per_image = []
            for inst_idx in by_image[img_idx]:
                inst = instances[inst_idx]
                for roi in roi_family(rng, inst.box, bounds, cfg):
                    per_image.append(RoiSample(roi=roi, matched_instance=inst_idx,
                                               class_id=inst.class_id))
            samples[img_idx] = per_image

        order = list(image_ids)
        rng.shuffle(order)
        ep_l2 = ep_l1 = 0.0
        n_rois = 0
        step: list[int] = []
        step_count = 0
        for pos, img_idx in enumerate(order):
            step.append(img_idx)
            step_count += len(samples[img_idx])
            if step_count < cfg.batch_rois and pos != len(order) - 1:
                continue

            dw = np.zeros_like(params.weights)
            db = np.zeros_like(params.biases)
            for gi in step:
                h, w = images[gi].height, images[gi].width
                maps = score_maps(feats[gi], params)
                dmaps = np.zeros((m, h, w))
                for s in samples[gi]:
                    logits, ctx = assemble_roi_logits(maps, s.roi, s.class_id,
                                                      cfg.k, cfg.num_classes)
                    p = _sigmoid(logits)
                    inst = instances[s.matched_instance]
                    t28 = resample_nearest(pseudo_masks[s.matched_instance],
                                           s.roi, ROI_GRID, ROI_GRID)
                    l2, g2 = loss_2d_arrays(p, t28.bits)
                    l1, g1 = loss_1d_arrays(p, s.roi, inst.box)
                    ep_l2 += l2
                    ep_l1 += l1
                    n_rois += 1
                    scatter_logit_grad(ctx, (g2 + cfg.box_loss_weight * g1) / step_count,
                                       dmaps)
                dw += dmaps.reshape(m, -1) @ flat_feats[gi]
                db += dmaps.sum(axis=(1, 2))
            params.weights -= cfg.learning_rate * dw
            params.biases -= cfg.learning_rate * db
            step = []
            step_count = 0
        trace.append((epoch, ep_l2 / max(n_rois, 1), ep_l1 / max(n_rois, 1)))
    return params, trace


def predict_rois(img: ImageRgb, params: SegmenterParams,
                 rois: list[tuple[Rect, int]]) -> list[RoiPrediction]:
    """Forward pass for a list of (roi, class_id) pairs."""
    maps = score_maps(pixel_features(img), params)
    return [assemble_roi(maps, roi, class_id, params.k, params.num_classes)
            for roi, class_id in rois]


def save_params(params: SegmenterParams, path) -> None:
    """Versioned little-endian checkpoint: magic, version, k, C, d, then
    weights and biases as 64-bit floats."""
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<IIII", _CHECKPOINT_VERSION, params.k,
                            params.num_classes, FEATURE_DIM))
        f.write(params.weights.astype("<f8").tobytes())
        f.write(params.biases.astype("<f8").tobytes())


def load_params(path) -> SegmenterParams:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, k, c, d = struct.unpack("<IIII", f.read(16))
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if d != FEATURE_DIM:
            raise ValueError(f"unexpected feature dim {d}")
        mrows = k * k * c
        weights = np.frombuffer(f.read(8 * mrows * d), dtype="<f8").reshape(mrows, d).copy()
        biases = np.frombuffer(f.read(8 * mrows), dtype="<f8").copy()
    return SegmenterParams(k=k, num_classes=c, weights=weights, biases=biases)
