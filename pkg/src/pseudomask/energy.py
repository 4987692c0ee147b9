"""Per-instance binary labeling energy: unary costs from fused foreground
probabilities plus a hard outside-box constraint, pairwise smoothness costs
from superpixel histogram similarity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import RealMap, Rect, resample_bilinear
from .superpixel import Histogram, SuperpixelPartition


@dataclass(frozen=True)
class EnergyConfig:
    delta_c: float = 5.0            # color histogram bandwidth
    delta_t: float = 10.0           # texture histogram bandwidth
    pairwise_weight: float = 1.0    # unary/pairwise balance (lambda)
    prob_clamp_eps: float = 1e-6
    uncovered_prior: float = 0.5    # probability for pixels no ROI covers

    def __post_init__(self):
        if self.delta_c <= 0 or self.delta_t <= 0:
            raise ValueError("delta_c and delta_t must be > 0")
        if self.pairwise_weight < 0:
            raise ValueError("pairwise_weight must be >= 0")
        if not 0 < self.uncovered_prior < 1:
            raise ValueError("uncovered_prior must be in (0, 1)")


@dataclass(frozen=True)
class RoiPrediction:
    """Predicted 28x28 foreground probability map for one ROI."""

    roi: Rect
    class_id: int
    fg28: np.ndarray  # (28, 28) floats in [0, 1]


@dataclass(frozen=True)
class InstanceEnergy:
    """Binary labeling energy over one instance's superpixels.

    hard_bg ids are pinned to background (infinite foreground cost);
    their cost_bg/cost_fg entries are 0 and unused. pairwise maps each
    adjacency pair (i, j), i < j, to the cost paid when labels differ.
    """

    n: int
    cost_bg: np.ndarray
    cost_fg: np.ndarray
    hard_bg: np.ndarray
    pairwise: dict = field(default_factory=dict)


def iou(a: Rect, b: Rect) -> float:
    inter = a.intersect(b)
    if inter is None:
        return 0.0
    ai = inter.area
    return ai / (a.area + b.area - ai)


def fuse_roi_probabilities(preds: list[RoiPrediction], gt_box: Rect,
                           class_id: int, region: Rect,
                           cfg: EnergyConfig) -> RealMap:
    """Average the upsampled 28x28 maps of all ROIs matching the instance
    (same class, box IoU > 0.5) over the region; pixels covered by no
    contributor fall back to the uncovered prior."""
    acc = np.zeros((region.height, region.width))
    cnt = np.zeros((region.height, region.width))
    for p in preds:
        if p.class_id != class_id or iou(p.roi, gt_box) <= 0.5:
            continue
        grid = RealMap(np.asarray(p.fg28, dtype=np.float64))
        up = resample_bilinear(grid, grid.bounds, p.roi.width, p.roi.height)
        ov = p.roi.intersect(region)
        if ov is None:
            continue
        acc[ov.y0 - region.y0:ov.y1 - region.y0,
            ov.x0 - region.x0:ov.x1 - region.x0] += \
            up.values[ov.y0 - p.roi.y0:ov.y1 - p.roi.y0,
                      ov.x0 - p.roi.x0:ov.x1 - p.roi.x0]
        cnt[ov.y0 - region.y0:ov.y1 - region.y0,
            ov.x0 - region.x0:ov.x1 - region.x0] += 1.0
    out = np.full(acc.shape, cfg.uncovered_prior)
    covered = cnt > 0
    out[covered] = acc[covered] / cnt[covered]
    return RealMap(out)


def unary_terms(part: SuperpixelPartition, prob: RealMap, gt_box: Rect,
                cfg: EnergyConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-superpixel (cost_bg, cost_fg, hard_bg). A superpixel with no
    pixel inside the box is hard background; otherwise costs sum negative
    log probabilities over its in-box pixels."""
    region = part.region
    if prob.height != region.height or prob.width != region.width:
        raise ValueError("probability map must match the partition region")
    eps = cfg.prob_clamp_eps
    n = part.n
    cost_bg = np.zeros(n)
    cost_fg = np.zeros(n)
    hard_bg = np.zeros(n, dtype=bool)
    for i, pix in enumerate(part.pixels):
        ix = pix[:, 1] + region.x0
        iy = pix[:, 0] + region.y0
        inside = ((ix >= gt_box.x0) & (ix < gt_box.x1)
                  & (iy >= gt_box.y0) & (iy < gt_box.y1))
        if not inside.any():
            hard_bg[i] = True
            continue
        p = np.clip(prob.values[pix[inside, 0], pix[inside, 1]], eps, 1.0 - eps)
        cost_fg[i] = -np.log(p).sum()
        cost_bg[i] = -np.log1p(-p).sum()
    return cost_bg, cost_fg, hard_bg


def pairwise_term(hi: Histogram, hj: Histogram, cfg: EnergyConfig) -> float:
    """Cost of giving two adjacent superpixels different labels: high for
    similar appearance, decaying with histogram distance."""
    dc2 = float(((hi.color - hj.color) ** 2).sum())
    dt2 = float(((hi.texture - hj.texture) ** 2).sum())
    return cfg.pairwise_weight * math.exp(-dc2 / cfg.delta_c ** 2
                                          - dt2 / cfg.delta_t ** 2)


def build_energy(part: SuperpixelPartition, prob: RealMap, gt_box: Rect,
                 cfg: EnergyConfig,
                 histograms: list[Histogram] | None = None,
                 img=None) -> InstanceEnergy:
    """Assemble the full instance energy from unary and pairwise tables."""
    if histograms is None:
        from .superpixel import build_histograms
        if img is None:
            raise ValueError("build_energy needs histograms or the source image")
        histograms = build_histograms(img, part)
    cost_bg, cost_fg, hard_bg = unary_terms(part, prob, gt_box, cfg)
    pairwise = {}
    for i, j in sorted(part.adjacency):
        pairwise[(i, j)] = pairwise_term(histograms[i], histograms[j], cfg)
    return InstanceEnergy(n=part.n, cost_bg=cost_bg, cost_fg=cost_fg,
                          hard_bg=hard_bg, pairwise=pairwise)


def evaluate_energy(e: InstanceEnergy, labeling) -> float:
    """Direct evaluation of the labeling energy; infinity if a hard
    background superpixel is labeled foreground."""
    lab = np.asarray(labeling)
    if lab.shape != (e.n,):
        raise ValueError("labeling length must equal the superpixel count")
    if ((lab == 1) & e.hard_bg).any():
        return math.inf
    # pinned ids cost 0 as background regardless of stored entries
    total = float(np.where(e.hard_bg, 0.0,
                           np.where(lab == 1, e.cost_fg, e.cost_bg)).sum())
    for (i, j), w in e.pairwise.items():
        if lab[i] != lab[j]:
            total += w
    return total
