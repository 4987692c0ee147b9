"""Synthetic desk-scale corpus: noisy uniform backgrounds with 1-3
non-occluding contrasting shapes (ellipses / convex polygons), plus
ground-truth masks and a tight-box manifest."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .imaging import BinaryMask, ImageRgb, Rect, write_image, write_mask

CLASSES = ["ellipse", "polygon"]

_BACKGROUNDS = np.array([
    (205, 205, 200), (190, 200, 210), (210, 195, 190), (198, 210, 198),
])
_SHAPE_COLORS = np.array([
    (170, 30, 40), (30, 60, 170), (25, 120, 50), (150, 40, 150),
    (180, 110, 20), (20, 130, 140),
])


def _ellipse_mask(h: int, w: int, cx: float, cy: float, rx: float, ry: float) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    return (((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0)


def _polygon_mask(h: int, w: int, verts: np.ndarray) -> np.ndarray:
    """Fill a convex polygon: a pixel center is inside when it lies on the
    inner side of every edge (vertices in counterclockwise order)."""
    ys, xs = np.mgrid[0:h, 0:w]
    inside = np.ones((h, w), dtype=bool)
    n = len(verts)
    for a in range(n):
        x0, y0 = verts[a]
        x1, y1 = verts[(a + 1) % n]
        cross = (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0)
        inside &= cross >= 0
    return inside


def _convex_verts(rng: np.random.Generator, cx: float, cy: float,
                  rx: float, ry: float) -> np.ndarray:
    """Random convex polygon: jittered radii on sorted angles around the
    center (star-shaped with 5-7 vertices, convexified via hull walk)."""
    nv = int(rng.integers(5, 8))
    angles = np.sort(rng.uniform(0, 2 * np.pi, nv))
    rad = rng.uniform(0.6, 1.0, nv)
    pts = np.stack([cx + rx * rad * np.cos(angles),
                    cy + ry * rad * np.sin(angles)], axis=1)
    # convex hull (monotone chain) keeps the mask convex
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(points):
        out = []
        def cross2(a, b):
            return a[0] * b[1] - a[1] * b[0]

        for p in points:
            while len(out) >= 2 and cross2(out[-1] - out[-2], p - out[-1]) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    return hull[::-1]  # counterclockwise in image coordinates


def tight_box(mask: np.ndarray) -> Rect:
    ys, xs = np.nonzero(mask)
    return Rect(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def generate_corpus(count: int, seed: int, out_dir: str | Path,
                    size: int = 96) -> Path:
    """Write `count` images, per-object ground-truth masks, and
    manifest.json into out_dir; deterministic per seed. Returns the
    manifest path."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "gt_masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    entries = []
    for i in range(count):
        bg = _BACKGROUNDS[rng.integers(len(_BACKGROUNDS))]
        img = np.clip(bg[None, None, :] +
                      rng.integers(-12, 13, size=(size, size, 3)),
                      0, 255).astype(np.uint8)
        occupied = np.zeros((size, size), dtype=bool)
        objects = []
        n_shapes = int(rng.integers(1, 4))
        for _shape_slot in range(n_shapes):
            placed = False
            for _ in range(40):
                rx = rng.uniform(8, 18)
                ry = rng.uniform(8, 18)
                cx = rng.uniform(rx + 2, size - rx - 2)
                cy = rng.uniform(ry + 2, size - ry - 2)
                class_id = int(rng.integers(len(CLASSES)))
                if class_id == 0:
                    shape = _ellipse_mask(size, size, cx, cy, rx, ry)
                else:
                    shape = _polygon_mask(size, size,
                                          _convex_verts(rng, cx, cy, rx, ry))
                if shape.sum() < 30:
                    continue
                box = tight_box(shape)
                pad = Rect(max(0, box.x0 - 2), max(0, box.y0 - 2),
                           min(size, box.x1 + 2), min(size, box.y1 + 2))
                if occupied[pad.y0:pad.y1, pad.x0:pad.x1].any():
                    continue
                occupied[pad.y0:pad.y1, pad.x0:pad.x1] = True
                color = _SHAPE_COLORS[rng.integers(len(_SHAPE_COLORS))]
                jitter = rng.integers(-6, 7, size=3)
                img[shape] = np.clip(color + jitter, 0, 255).astype(np.uint8)
                mask_name = f"gt_masks/img{i:04d}_obj{len(objects):04d}.png"
                write_mask(BinaryMask(shape.astype(np.uint8)), out / mask_name)
                objects.append({
                    "class_id": class_id,
                    "bbox": [box.x0, box.y0, box.x1, box.y1],
                    "gt_mask": mask_name,
                })
                placed = True
                break
            if not placed:
                break
        img_name = f"images/img{i:04d}.png"
        write_image(ImageRgb(img), out / img_name)
        entries.append({"path": img_name, "objects": objects})

    manifest = {"classes": CLASSES, "images": entries}
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return manifest_path
