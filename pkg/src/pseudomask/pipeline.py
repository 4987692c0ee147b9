"""Alternating optimization loop: initialize pseudo masks from boxes,
then repeat (train segmenter -> predict per-instance probabilities ->
refine masks via superpixel graph cut) with degenerate-mask guards."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import maxflow, segmenter
from .energy import EnergyConfig, RoiPrediction, build_energy, fuse_roi_probabilities
from .imaging import BinaryMask, ImageRgb, Rect, enlarge_box, write_mask
from .segmenter import SegmenterConfig, SegmenterParams
from .superpixel import build_histograms, default_min_size, felzenszwalb_segment

BOX_ENLARGE = 0.2  # spatial range growth of the refinement crop


@dataclass(frozen=True)
class Instance:
    image_index: int
    class_id: int
    box: Rect
    gt_mask: BinaryMask | None = None  # evaluation only


@dataclass(frozen=True)
class PseudoMask:
    instance_index: int
    mask: BinaryMask  # full image size; foreground never leaves the gt box
    iteration: int


@dataclass(frozen=True)
class SuperpixelConfig:
    scale: float = 100.0
    min_size: int | None = None  # None: max(20, crop_area / 400)


@dataclass(frozen=True)
class PipelineConfig:
    iterations: int = 3  # T of the alternating loop
    min_fg_fraction: float = 0.05
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    segmenter: SegmenterConfig = field(default_factory=lambda: SegmenterConfig(num_classes=2))
    superpixel: SuperpixelConfig = field(default_factory=SuperpixelConfig)
    seed: int = 7
    jobs: int = 1

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class MaskEvaluation:
    mean_iou: float
    per_instance: list
    skipped: int


@dataclass
class IterationResult:
    iteration: int
    params: SegmenterParams
    masks: list
    evaluation: MaskEvaluation
    loss_trace: list
    guard_trips: int


def initialize_pseudo_masks(instances: list[Instance],
                            images: list[ImageRgb]) -> list[PseudoMask]:
    """Box-filled masks, iteration 0."""
    out = []
    for idx, inst in enumerate(instances):
        img = images[inst.image_index]
        bits = np.zeros((img.height, img.width), dtype=np.uint8)
        bits[inst.box.y0:inst.box.y1, inst.box.x0:inst.box.x1] = 1
        out.append(PseudoMask(instance_index=idx, mask=BinaryMask(bits),
                              iteration=0))
    return out


def refine_pseudo_mask(inst: Instance, preds: list[RoiPrediction],
                       img: ImageRgb, prev: PseudoMask,
                       cfg: PipelineConfig) -> tuple[PseudoMask, bool]:
    """One graph-cut refinement of an instance's pseudo mask. Returns the
    new mask and whether the degenerate-cut guard tripped (in which case
    the previous mask is kept)."""
    region = enlarge_box(inst.box, BOX_ENLARGE, img.bounds)
    min_size = cfg.superpixel.min_size
    if min_size is None:
        min_size = default_min_size(region.area)
    part = felzenszwalb_segment(img, region, cfg.superpixel.scale, min_size)
    histograms = build_histograms(img, part)
    prob = fuse_roi_probabilities(preds, inst.box, inst.class_id, region,
                                  cfg.energy)
    e = build_energy(part, prob, inst.box, cfg.energy, histograms=histograms)
    g, id_map = maxflow.energy_to_network(e)
    cut = maxflow.solve_max_flow(g)
    labels = maxflow.labeling_from_cut(e, cut, id_map)

    bits = np.zeros((img.height, img.width), dtype=np.uint8)
    crop = labels[part.labels].astype(np.uint8)
    bits[region.y0:region.y1, region.x0:region.x1] = crop
    # pixel-level box constraint: nothing survives outside the gt box
    boxed = np.zeros_like(bits)
    boxed[inst.box.y0:inst.box.y1, inst.box.x0:inst.box.x1] = \
        bits[inst.box.y0:inst.box.y1, inst.box.x0:inst.box.x1]

    if int(boxed.sum()) < cfg.min_fg_fraction * inst.box.area:
        return PseudoMask(instance_index=prev.instance_index, mask=prev.mask,
                          iteration=prev.iteration + 1), True
    return PseudoMask(instance_index=prev.instance_index,
                      mask=BinaryMask(boxed), iteration=prev.iteration + 1), False


def evaluate_masks(masks: list[PseudoMask],
                   instances: list[Instance]) -> MaskEvaluation:
    """Pixel IoU of each mask against its instance's ground-truth mask.
    Instances without a ground truth are skipped (counted); empty-vs-empty
    counts as IoU 1."""
    per = []
    skipped = 0
    for pm in masks:
        inst = instances[pm.instance_index]
        if inst.gt_mask is None:
            per.append(None)
            skipped += 1
            continue
        a = pm.mask.bits.astype(bool)
        b = inst.gt_mask.bits.astype(bool)
        union = np.logical_or(a, b).sum()
        if union == 0:
            per.append(1.0)
        else:
            per.append(float(np.logical_and(a, b).sum() / union))
    scored = [v for v in per if v is not None]
    mean = float(np.mean(scored)) if scored else 0.0
    return MaskEvaluation(mean_iou=mean, per_instance=per, skipped=skipped)


def prediction_rois(rng: np.random.Generator, instances_in_image: list[Instance],
                    bounds: Rect, cfg: SegmenterConfig) -> list[tuple[Rect, int]]:
    """Refinement-time ROI set: each instance's gt box plus the same jitter
    family used in training, so probability fusion has several contributors."""
    rois = []
    for inst in instances_in_image:
        for roi in segmenter.roi_family(rng, inst.box, bounds, cfg):
            rois.append((roi, inst.class_id))
    return rois


def _write_iteration(out_dir: Path, result: IterationResult,
                     instances: list[Instance]) -> None:
    it_dir = out_dir / f"iter_{result.iteration}"
    mask_dir = it_dir / "masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    for pm in result.masks:
        inst = instances[pm.instance_index]
        write_mask(pm.mask, mask_dir / f"img{inst.image_index:04d}_obj{pm.instance_index:04d}.png")
    segmenter.save_params(result.params, it_dir / "params.pmsk")
    with open(it_dir / "loss_trace.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss_2d", "loss_1d"])
        writer.writerows(result.loss_trace)
    metrics = {
        "iteration": result.iteration,
        "mean_iou": result.evaluation.mean_iou,
        "per_instance_iou": result.evaluation.per_instance,
        "skipped_no_gt": result.evaluation.skipped,
        "guard_trips": result.guard_trips,
        "loss_2d_final": result.loss_trace[-1][1] if result.loss_trace else None,
        "loss_1d_final": result.loss_trace[-1][2] if result.loss_trace else None,
    }
    with open(it_dir / "metrics.json", "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
        f.write("\n")


def run_algorithm1(images: list[ImageRgb], instances: list[Instance],
                   cfg: PipelineConfig,
                   out_dir: str | Path | None = None) -> list[IterationResult]:
    """Alternate segmenter training and graph-cut mask refinement for
    cfg.iterations rounds; returns (and optionally persists) per-iteration
    parameters, masks, and metrics."""
    if not instances:
        raise ValueError("empty dataset")
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    by_image: dict[int, list[Instance]] = {}
    for inst in instances:
        by_image.setdefault(inst.image_index, []).append(inst)

    seg_cfg = cfg.segmenter
    masks = initialize_pseudo_masks(instances, images)
    results: list[IterationResult] = []

    def train_current(t: int):
        cur = SegmenterConfig(**{**seg_cfg.__dict__, "seed": seg_cfg.seed + t})
        return segmenter.train(images, instances,
                               [pm.mask for pm in masks], cur)

    params, trace = train_current(0)
    res = IterationResult(iteration=0, params=params, masks=list(masks),
                          evaluation=evaluate_masks(masks, instances),
                          loss_trace=trace, guard_trips=0)
    results.append(res)
    if out_path is not None:
        _write_iteration(out_path, res, instances)

    for t in range(1, cfg.iterations + 1):
        preds_by_image: dict[int, list[RoiPrediction]] = {}
        for img_idx, img_insts in sorted(by_image.items()):
            rng = np.random.default_rng((cfg.seed, t, img_idx))
            rois = prediction_rois(rng, img_insts, images[img_idx].bounds, seg_cfg)
            preds_by_image[img_idx] = segmenter.predict_rois(
                images[img_idx], params, rois)

        def refine_one(i: int):
            inst = instances[i]
            return refine_pseudo_mask(inst, preds_by_image[inst.image_index],
                                      images[inst.image_index], masks[i], cfg)

        if cfg.jobs > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                refined = list(pool.map(refine_one, range(len(instances))))
        else:
            refined = [refine_one(i) for i in range(len(instances))]
        masks = [r[0] for r in refined]
        guard_trips = sum(1 for r in refined if r[1])

        params, trace = train_current(t)
        res = IterationResult(iteration=t, params=params, masks=list(masks),
                              evaluation=evaluate_masks(masks, instances),
                              loss_trace=trace, guard_trips=guard_trips)
        results.append(res)
        if out_path is not None:
            _write_iteration(out_path, res, instances)
    return results
