"""Dataset manifest (JSON) loading: images, per-object class/box
annotations, and optional ground-truth masks for evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .imaging import ImageRgb, Rect, read_image, read_mask
from .pipeline import Instance


class DataError(Exception):
    """Malformed manifest, config, or referenced file."""


@dataclass
class LoadedDataset:
    images: list
    instances: list
    classes: list
    image_paths: list


def _parse_bbox(raw, bounds: Rect, where: str) -> Rect:
    if not (isinstance(raw, list) and len(raw) == 4):
        raise DataError(f"{where}: bbox must be [x0, y0, x1, y1]")
    try:
        box = Rect(*(int(v) for v in raw))
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: invalid bbox {raw}: {exc}") from exc
    if not bounds.contains(box):
        raise DataError(f"{where}: bbox {raw} out of image bounds")
    return box


def load_manifest(path: str | Path) -> LoadedDataset:
    """Load a manifest and everything it references. Paths resolve
    relative to the manifest file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc

    classes = doc.get("classes")
    if not isinstance(classes, list) or not classes:
        raise DataError(f"manifest {path}: missing or empty 'classes'")
    entries = doc.get("images")
    if not isinstance(entries, list) or not entries:
        raise DataError(f"manifest {path}: missing or empty 'images'")

    base = path.parent
    images, instances, image_paths = [], [], []
    for i, entry in enumerate(entries):
        where = f"images[{i}]"
        img_path = entry.get("path")
        if not img_path:
            raise DataError(f"{where}: missing 'path'")
        full = base / img_path
        if not full.is_file():
            raise DataError(f"{where}: image not found: {full}")
        img = read_image(full)
        images.append(img)
        image_paths.append(str(full))
        for j, obj in enumerate(entry.get("objects", [])):
            ow = f"{where}.objects[{j}]"
            class_id = obj.get("class_id")
            if not isinstance(class_id, int) or not 0 <= class_id < len(classes):
                raise DataError(f"{ow}: class_id must index into 'classes'")
            box = _parse_bbox(obj.get("bbox"), img.bounds, ow)
            gt = None
            if obj.get("gt_mask"):
                mask_path = base / obj["gt_mask"]
                if not mask_path.is_file():
                    raise DataError(f"{ow}: gt_mask not found: {mask_path}")
                gt = read_mask(mask_path)
                if gt.width != img.width or gt.height != img.height:
                    raise DataError(f"{ow}: gt_mask size differs from image")
            instances.append(Instance(image_index=i, class_id=class_id,
                                      box=box, gt_mask=gt))
    return LoadedDataset(images=images, instances=instances, classes=classes,
                         image_paths=image_paths)
