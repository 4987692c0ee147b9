"""Graph-based superpixel segmentation of an instance crop (Felzenszwalb-
Huttenlocher style union-find merging) plus per-superpixel color and
texture histograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import ImageRgb, Rect, gradients, to_grayscale

COLOR_BINS = 25   # per RGB channel
TEXTURE_BINS = 10  # per gradient orientation


@dataclass(frozen=True)
class SuperpixelPartition:
    """Partition of a crop into 4-connected superpixels.

    labels is crop-local, shape (region.height, region.width), ids 0..n-1
    assigned in raster-scan order of each region's first pixel. pixels[i]
    holds crop-local (y, x) coordinates. adjacency holds unordered id pairs
    (i, j) with i < j that share at least one 4-neighboring pixel pair.
    """

    region: Rect
    labels: np.ndarray
    pixels: tuple
    adjacency: frozenset

    @property
    def n(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class Histogram:
    """L1-normalized appearance histograms of one superpixel.

    color: 75 entries (25 bins per R, G, B channel; each channel sums to 1).
    texture: 20 entries (10 bins per horizontal/vertical gradient
    orientation; each orientation sums to 1).
    """

    color: np.ndarray
    texture: np.ndarray


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        if self.rank[a] < self.rank[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        if self.rank[a] == self.rank[b]:
            self.rank[a] += 1
        return a


def _crop_edges(crop: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """4-neighbor edges of the crop with Euclidean RGB weights. Edge order
    for tie-breaking is (source pixel raster index, right-then-down)."""
    h, w = crop.shape[:2]
    idx = np.arange(h * w).reshape(h, w)
    f = crop.astype(np.float64)

    srcs, dsts, weights, direction = [], [], [], []
    if w > 1:
        d = np.sqrt(((f[:, 1:] - f[:, :-1]) ** 2).sum(axis=2))
        srcs.append(idx[:, :-1].ravel())
        dsts.append(idx[:, 1:].ravel())
        weights.append(d.ravel())
        direction.append(np.zeros(d.size, dtype=np.int8))
    if h > 1:
        d = np.sqrt(((f[1:, :] - f[:-1, :]) ** 2).sum(axis=2))
        srcs.append(idx[:-1, :].ravel())
        dsts.append(idx[1:, :].ravel())
        weights.append(d.ravel())
        direction.append(np.ones(d.size, dtype=np.int8))
    if not srcs:
        return (np.empty(0, dtype=int),) * 3

    src = np.concatenate(srcs)
    dst = np.concatenate(dsts)
    wgt = np.concatenate(weights)
    dirn = np.concatenate(direction)
    order = np.lexsort((dirn, src, wgt))
    return src[order], dst[order], wgt[order]


def felzenszwalb_segment(img: ImageRgb, region: Rect, scale: float,
                         min_size: int) -> SuperpixelPartition:
    """Segment the crop into superpixels by union-find merging of
    color-sorted 4-neighbor edges, then absorb undersized components."""
    if scale <= 0:
        raise ValueError("scale must be > 0")
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    if not img.bounds.contains(region):
        raise ValueError("region must lie within the image")

    crop = img.data[region.y0:region.y1, region.x0:region.x1]
    h, w = crop.shape[:2]
    npix = h * w
    src, dst, wgt = _crop_edges(crop)

    uf = _UnionFind(npix)
    internal = [0.0] * npix
    find = uf.find
    for a, b, weight in zip(src.tolist(), dst.tolist(), wgt.tolist()):
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        if (weight <= internal[ra] + scale / uf.size[ra]
                and weight <= internal[rb] + scale / uf.size[rb]):
            r = uf.union(ra, rb)
            internal[r] = weight  # edges arrive in ascending weight order

    # absorb components below the size floor
    for a, b in zip(src.tolist(), dst.tolist()):
        ra, rb = find(a), find(b)
        if ra != rb and (uf.size[ra] < min_size or uf.size[rb] < min_size):
            uf.union(ra, rb)

    roots = np.fromiter((find(i) for i in range(npix)), dtype=np.int64, count=npix)
    _, canonical = np.unique(roots, return_inverse=True)
    # np.unique sorts by root id, not by first-pixel order; remap
    first_seen = {}
    remap = np.empty(canonical.max() + 1, dtype=np.int64)
    next_id = 0
    for lab in canonical.tolist():
        if lab not in first_seen:
            first_seen[lab] = next_id
            next_id += 1
    for lab, new in first_seen.items():
        remap[lab] = new
    labels = remap[canonical].reshape(h, w)

    n = next_id
    ys, xs = np.nonzero(np.ones((h, w), dtype=bool))
    order = np.argsort(labels.ravel(), kind="stable")
    flat = labels.ravel()[order]
    coords = np.stack([ys[order], xs[order]], axis=1)
    bounds_idx = np.searchsorted(flat, np.arange(n + 1))
    pixels = tuple(coords[bounds_idx[i]:bounds_idx[i + 1]] for i in range(n))

    adjacency = set()
    if w > 1:
        la, lb = labels[:, :-1].ravel(), labels[:, 1:].ravel()
        diff = la != lb
        adjacency.update(zip(np.minimum(la[diff], lb[diff]).tolist(),
                             np.maximum(la[diff], lb[diff]).tolist()))
    if h > 1:
        la, lb = labels[:-1, :].ravel(), labels[1:, :].ravel()
        diff = la != lb
        adjacency.update(zip(np.minimum(la[diff], lb[diff]).tolist(),
                             np.maximum(la[diff], lb[diff]).tolist()))

    return SuperpixelPartition(region=region, labels=labels, pixels=pixels,
                               adjacency=frozenset(adjacency))


def default_min_size(crop_area: int) -> int:
    return max(20, crop_area // 400)


def build_histograms(img: ImageRgb, part: SuperpixelPartition) -> list[Histogram]:
    """Color (25 bins x RGB) and texture (10 bins x {horizontal, vertical}
    gradient) histograms per superpixel, L1-normalized per channel and per
    orientation."""
    region = part.region
    gray = to_grayscale(img)
    gx, gy = gradients(gray)

    out = []
    for pix in part.pixels:
        if len(pix) == 0:
            raise ValueError("empty superpixel violates the partition invariant")
        iy = pix[:, 0] + region.y0
        ix = pix[:, 1] + region.x0
        npix = len(pix)

        color = np.empty(3 * COLOR_BINS)
        for c in range(3):
            vals = img.data[iy, ix, c].astype(np.int64)
            bins = vals * COLOR_BINS // 256
            color[c * COLOR_BINS:(c + 1) * COLOR_BINS] = \
                np.bincount(bins, minlength=COLOR_BINS) / npix

        texture = np.empty(2 * TEXTURE_BINS)
        for o, gmap in enumerate((gx, gy)):
            vals = np.clip(gmap.values[iy, ix], -1.0, 1.0)
            bins = np.minimum((vals + 1.0) * (TEXTURE_BINS / 2.0),
                              TEXTURE_BINS - 1).astype(np.int64)
            texture[o * TEXTURE_BINS:(o + 1) * TEXTURE_BINS] = \
                np.bincount(bins, minlength=TEXTURE_BINS) / npix

        out.append(Histogram(color=color, texture=texture))
    return out
