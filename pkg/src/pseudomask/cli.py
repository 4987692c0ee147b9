"""Command-line entry point: corpus synthesis, full pipeline runs, mask
evaluation, and standalone superpixel / refinement commands.

Exit codes: 0 ok, 1 usage, 2 data error, 3 internal.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import maxflow, synth
from .dataset import DataError, load_manifest
from .energy import EnergyConfig, build_energy
from .imaging import (Rect, enlarge_box, read_image, read_mask, read_prob_map,
                      write_label_map, write_mask)
from .pipeline import (PipelineConfig, SuperpixelConfig, evaluate_masks,
                       initialize_pseudo_masks, run_algorithm1)
from .imaging import BinaryMask
from .pipeline import PseudoMask
from .segmenter import SegmenterConfig
from .superpixel import default_min_size, felzenszwalb_segment

log = logging.getLogger("pseudomask")

# JSON key -> EnergyConfig field
_ENERGY_KEYS = {
    "delta_c": "delta_c",
    "delta_t": "delta_t",
    "lambda": "pairwise_weight",
    "prob_clamp_eps": "prob_clamp_eps",
    "uncovered_prior": "uncovered_prior",
}
_SEGMENTER_KEYS = [
    "k", "learning_rate", "epochs", "batch_rois", "seed",
    "jitters_per_instance", "jitter_scale_lo", "jitter_scale_hi",
    "jitter_translate", "box_loss_weight",
]
_SUPERPIXEL_KEYS = ["scale", "min_size"]
_TOP_KEYS = ["T", "min_fg_fraction", "seed", "energy", "segmenter", "superpixel"]


class UsageError(Exception):
    pass


def _parse_set_overrides(pairs: list[str], doc: dict) -> dict:
    for item in pairs:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise DataError(f"config key {key!r}: {p!r} is not an object")
        node[parts[-1]] = value
    return doc


def build_pipeline_config(doc: dict, num_classes: int, seed: int | None,
                          jobs: int) -> PipelineConfig:
    """Build a PipelineConfig from a JSON config document; unknown keys
    are rejected by name."""
    for key in doc:
        if key not in _TOP_KEYS:
            raise DataError(f"unknown config key {key!r}")

    energy_doc = dict(doc.get("energy", {}))
    energy_kwargs = {}
    for key, value in energy_doc.items():
        if key not in _ENERGY_KEYS:
            raise DataError(f"unknown config key 'energy.{key}'")
        energy_kwargs[_ENERGY_KEYS[key]] = value

    seg_doc = dict(doc.get("segmenter", {}))
    for key in seg_doc:
        if key not in _SEGMENTER_KEYS:
            raise DataError(f"unknown config key 'segmenter.{key}'")
    seg_doc["num_classes"] = num_classes

    sp_doc = dict(doc.get("superpixel", {}))
    for key in sp_doc:
        if key not in _SUPERPIXEL_KEYS:
            raise DataError(f"unknown config key 'superpixel.{key}'")

    try:
        cfg = PipelineConfig(
            iterations=doc.get("T", 3),
            min_fg_fraction=doc.get("min_fg_fraction", 0.05),
            energy=EnergyConfig(**energy_kwargs),
            segmenter=SegmenterConfig(**seg_doc),
            superpixel=SuperpixelConfig(**sp_doc),
            seed=doc.get("seed", 7) if seed is None else seed,
            jobs=jobs,
        )
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid config: {exc}") from exc
    if seed is not None or "seed" in doc:
        cfg = dataclasses.replace(
            cfg, segmenter=dataclasses.replace(cfg.segmenter, seed=cfg.seed))
    return cfg


def _load_config_doc(args) -> dict:
    doc = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise DataError(f"config not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise DataError(f"config {path} must be a JSON object")
    return _parse_set_overrides(args.set or [], doc)


def _parse_box(raw: str) -> Rect:
    try:
        parts = [int(v) for v in raw.split(",")]
        if len(parts) != 4:
            raise ValueError("need 4 values")
        return Rect(*parts)
    except ValueError as exc:
        raise UsageError(f"bad --box {raw!r}: {exc}") from exc


def cmd_synth(args) -> int:
    manifest = synth.generate_corpus(args.count, args.seed, args.out,
                                     size=args.size)
    log.info("wrote corpus manifest %s", manifest)
    print(str(manifest))
    return 0


def cmd_run(args) -> int:
    doc = _load_config_doc(args)
    ds = load_manifest(args.manifest)
    cfg = build_pipeline_config(doc, num_classes=len(ds.classes),
                                seed=args.seed, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {
        "T": cfg.iterations,
        "min_fg_fraction": cfg.min_fg_fraction,
        "seed": cfg.seed,
        "energy": {k: getattr(cfg.energy, v) for k, v in _ENERGY_KEYS.items()},
        "segmenter": {k: getattr(cfg.segmenter, k) for k in _SEGMENTER_KEYS},
        "superpixel": {k: getattr(cfg.superpixel, k) for k in _SUPERPIXEL_KEYS},
    }
    with open(out / "config.json", "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True)
        f.write("\n")
    results = run_algorithm1(ds.images, ds.instances, cfg, out_dir=out)
    log.info("finished %d iterations; final mean IoU %.4f",
             cfg.iterations, results[-1].evaluation.mean_iou)
    return 0


def cmd_eval(args) -> int:
    ds = load_manifest(args.manifest)
    pred_dir = Path(args.pred_dir)
    if not pred_dir.is_dir():
        raise DataError(f"prediction directory not found: {pred_dir}")
    masks = []
    missing = []
    for idx, inst in enumerate(ds.instances):
        name = f"img{inst.image_index:04d}_obj{idx:04d}.png"
        path = pred_dir / name
        if not path.is_file():
            missing.append(name)
            continue
        pred = read_mask(path)
        img = ds.images[inst.image_index]
        if pred.width != img.width or pred.height != img.height:
            raise DataError(f"{name}: size differs from image")
        masks.append(PseudoMask(instance_index=idx, mask=pred, iteration=0))
    if missing:
        raise DataError("missing predicted masks: " + ", ".join(missing))
    ev = evaluate_masks(masks, ds.instances)
    report = {
        "mean_iou": ev.mean_iou,
        "per_instance": [
            {"instance": pm.instance_index,
             "image": ds.instances[pm.instance_index].image_index,
             "iou": ev.per_instance[i]}
            for i, pm in enumerate(masks)
        ],
        "skipped_no_gt": ev.skipped,
    }
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


def cmd_superpixels(args) -> int:
    img = read_image(args.image)
    region = img.bounds
    min_size = args.min_size if args.min_size else default_min_size(region.area)
    part = felzenszwalb_segment(img, region, args.scale, min_size)
    write_label_map(part.labels, args.out)
    log.info("wrote %d-superpixel label map to %s", part.n, args.out)
    print(part.n)
    return 0


def cmd_refine(args) -> int:
    doc = _load_config_doc(args)
    energy_doc = doc.get("energy", {})
    for key in energy_doc:
        if key not in _ENERGY_KEYS:
            raise DataError(f"unknown config key 'energy.{key}'")
    try:
        ecfg = EnergyConfig(**{_ENERGY_KEYS[k]: v for k, v in energy_doc.items()})
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid config: {exc}") from exc
    sp_doc = doc.get("superpixel", {})
    for key in sp_doc:
        if key not in _SUPERPIXEL_KEYS:
            raise DataError(f"unknown config key 'superpixel.{key}'")

    img = read_image(args.image)
    prob = read_prob_map(args.prob)
    if prob.width != img.width or prob.height != img.height:
        raise DataError("probability map size differs from image")
    box = _parse_box(args.box)
    if not img.bounds.contains(box):
        raise DataError(f"--box {args.box} out of image bounds")

    region = enlarge_box(box, 0.2, img.bounds)
    scale = sp_doc.get("scale", 100.0)
    min_size = sp_doc.get("min_size") or default_min_size(region.area)
    part = felzenszwalb_segment(img, region, scale, min_size)
    from .imaging import RealMap
    crop_prob = RealMap(prob.values[region.y0:region.y1, region.x0:region.x1])
    e = build_energy(part, crop_prob, box, ecfg, img=img)
    g, id_map = maxflow.energy_to_network(e)
    if args.dump_network:
        Path(args.dump_network).write_text(maxflow.to_dimacs(g))
    cut = maxflow.solve_max_flow(g)
    labels = maxflow.labeling_from_cut(e, cut, id_map)
    bits = np.zeros((img.height, img.width), dtype=np.uint8)
    bits[region.y0:region.y1, region.x0:region.x1] = \
        labels[part.labels].astype(np.uint8)
    boxed = np.zeros_like(bits)
    boxed[box.y0:box.y1, box.x0:box.x1] = bits[box.y0:box.y1, box.x0:box.x1]
    write_mask(BinaryMask(boxed), args.out)
    log.info("wrote refined mask to %s", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pseudomask",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel workers for per-instance refinement")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=96)
    p.set_defaults(func=cmd_synth, needs_seed=True)

    p = sub.add_parser("run", help="run the alternating refinement pipeline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate predicted masks against a manifest")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("superpixels", help="write a superpixel label map")
    p.add_argument("--image", required=True)
    p.add_argument("--scale", type=float, default=100.0)
    p.add_argument("--min-size", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_superpixels)

    p = sub.add_parser("refine", help="graph-cut refine one instance from a probability map PNG")
    p.add_argument("--image", required=True)
    p.add_argument("--prob", required=True)
    p.add_argument("--box", required=True, metavar="X0,Y0,X1,Y1")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-network", default=None,
                   help="write the flow network in DIMACS max-flow format")
    p.set_defaults(func=cmd_refine)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "needs_seed", False) and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc}", file=sys.stderr)
        if getattr(args, "verbose", False):
            raise
        return 3


if __name__ == "__main__":
    sys.exit(main())
