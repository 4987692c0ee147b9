"""Raster types (RGB images, binary masks, real-valued maps), PNG I/O,
grayscale conversion, gradients, resampling, and box geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle, [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate rect {self!r}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, other: "Rect") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and other.x1 <= self.x1 and other.y1 <= self.y1)

    def intersect(self, other: "Rect") -> "Rect | None":
        x0 = max(self.x0, other.x0)
        y0 = max(self.y0, other.y0)
        x1 = min(self.x1, other.x1)
        y1 = min(self.y1, other.y1)
        if x0 >= x1 or y0 >= y1:
            return None
        return Rect(x0, y0, x1, y1)


@dataclass(frozen=True)
class ImageRgb:
    """8-bit 3-channel raster; data has shape (height, width, 3), dtype uint8."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError("ImageRgb data must be (H, W, 3)")
        if self.data.dtype != np.uint8:
            raise ValueError("ImageRgb data must be uint8")
        if self.height < 1 or self.width < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def bounds(self) -> Rect:
        return Rect(0, 0, self.width, self.height)


@dataclass(frozen=True)
class BinaryMask:
    """Binary raster; bits has shape (height, width), values in {0, 1}."""

    bits: np.ndarray

    def __post_init__(self):
        if self.bits.ndim != 2:
            raise ValueError("BinaryMask bits must be (H, W)")
        if self.bits.dtype != np.uint8:
            raise ValueError("BinaryMask bits must be uint8")
        if not np.all((self.bits == 0) | (self.bits == 1)):
            raise ValueError("mask values must be 0 or 1")

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def bounds(self) -> Rect:
        return Rect(0, 0, self.width, self.height)


@dataclass(frozen=True)
class RealMap:
    """Real-valued raster; values has shape (height, width), all finite."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("RealMap values must be (H, W)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("RealMap values must be finite")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def bounds(self) -> Rect:
        return Rect(0, 0, self.width, self.height)


# Standard luma weights; only gradient histograms consume the result.
_LUMA = np.array([0.299, 0.587, 0.114])


def to_grayscale(img: ImageRgb) -> RealMap:
    """Luma grayscale in [0, 1]."""
    g = img.data.astype(np.float64) @ _LUMA / 255.0
    return RealMap(g)


def gradients(gray: RealMap) -> tuple[RealMap, RealMap]:
    """Horizontal and vertical gradients: central differences in the
    interior, one-sided at the borders."""
    g = gray.values
    if gray.width > 1:
        gx = np.gradient(g, axis=1, edge_order=1)
    else:
        gx = np.zeros_like(g)
    if gray.height > 1:
        gy = np.gradient(g, axis=0, edge_order=1)
    else:
        gy = np.zeros_like(g)
    return RealMap(gx), RealMap(gy)


def _clamp_rect(r: Rect, bounds: Rect) -> Rect:
    x0 = min(max(r.x0, bounds.x0), bounds.x1)
    y0 = min(max(r.y0, bounds.y0), bounds.y1)
    x1 = min(max(r.x1, bounds.x0), bounds.x1)
    y1 = min(max(r.y1, bounds.y0), bounds.y1)
    if x0 >= x1 or y0 >= y1:
        raise ValueError(f"source rect {r!r} degenerate after clamping to {bounds!r}")
    return Rect(x0, y0, x1, y1)


def _sample_points(src_lo: int, src_size: int, out_size: int) -> np.ndarray:
    """Continuous source coordinates of output pixel centers."""
    return src_lo + (np.arange(out_size) + 0.5) * (src_size / out_size) - 0.5


def resample_bilinear(m: RealMap, src: Rect, out_w: int, out_h: int) -> RealMap:
    """Bilinear resample of the src window onto an out_w x out_h grid,
    pixel centers aligned. Sample points near the window border may read
    neighboring map pixels; only the map bounds clamp them."""
    src = _clamp_rect(src, m.bounds)
    xs = _sample_points(src.x0, src.width, out_w)
    ys = _sample_points(src.y0, src.height, out_h)
    x0 = np.clip(np.floor(xs).astype(int), 0, m.width - 1)
    y0 = np.clip(np.floor(ys).astype(int), 0, m.height - 1)
    x1 = np.minimum(x0 + 1, m.width - 1)
    y1 = np.minimum(y0 + 1, m.height - 1)
    wx = np.clip(xs - x0, 0.0, 1.0)
    wy = np.clip(ys - y0, 0.0, 1.0)

    v = m.values
    top = v[np.ix_(y0, x0)] * (1 - wx) + v[np.ix_(y0, x1)] * wx
    bot = v[np.ix_(y1, x0)] * (1 - wx) + v[np.ix_(y1, x1)] * wx
    out = top * (1 - wy[:, None]) + bot * wy[:, None]
    return RealMap(out)


def resample_nearest(mask: BinaryMask, src: Rect, out_w: int, out_h: int) -> BinaryMask:
    """Nearest-neighbor resample of the src window of a binary mask."""
    src = _clamp_rect(src, mask.bounds)
    xs = _sample_points(src.x0, src.width, out_w)
    ys = _sample_points(src.y0, src.height, out_h)
    xi = np.clip(np.floor(xs + 0.5).astype(int), 0, mask.width - 1)
    yi = np.clip(np.floor(ys + 0.5).astype(int), 0, mask.height - 1)
    return BinaryMask(mask.bits[np.ix_(yi, xi)])


def enlarge_box(box: Rect, factor: float, bounds: Rect) -> Rect:
    """Grow width and height by `factor` total (factor/2 per side), round
    outward, clamp to bounds. Result always contains `box`."""
    if factor < 0:
        raise ValueError("factor must be >= 0")
    pad_x = box.width * factor / 2.0
    pad_y = box.height * factor / 2.0
    x0 = max(bounds.x0, math.floor(box.x0 - pad_x))
    y0 = max(bounds.y0, math.floor(box.y0 - pad_y))
    x1 = min(bounds.x1, math.ceil(box.x1 + pad_x))
    y1 = min(bounds.y1, math.ceil(box.y1 + pad_y))
    return Rect(x0, y0, x1, y1)


def read_image(path) -> ImageRgb:
    with Image.open(path) as im:
        return ImageRgb(np.asarray(im.convert("RGB"), dtype=np.uint8))


def write_image(img: ImageRgb, path) -> None:
    Image.fromarray(img.data, mode="RGB").save(path, format="PNG")


def read_mask(path) -> BinaryMask:
    """8-bit grayscale PNG; any nonzero pixel is foreground."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return BinaryMask((arr > 0).astype(np.uint8))


def write_mask(mask: BinaryMask, path) -> None:
    """8-bit grayscale PNG: 0 = background, 255 = foreground."""
    Image.fromarray(mask.bits * np.uint8(255), mode="L").save(path, format="PNG")


def read_prob_map(path) -> RealMap:
    """8-bit grayscale PNG read as probabilities, value/255."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return RealMap(arr.astype(np.float64) / 255.0)


def write_label_map(labels: np.ndarray, path) -> None:
    """Label raster as 16-bit grayscale PNG (debug output)."""
    if labels.max() > 0xFFFF:
        raise ValueError("too many labels for 16-bit output")
    Image.fromarray(labels.astype(np.uint16)).save(path, format="PNG")
