"""Tissue mask on a low-resolution level and the candidate patch grid."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import cv2
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .colorops import saturation
from .errors import ArgumentError
from .slide_io import PyramidSlide, best_level_for

PATCH_SIZE = 256
MASK_DOWNSAMPLE = 16

_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class PatchCoord:
    x: int
    y: int
    patch_size: int = PATCH_SIZE
    read_downsample: int = 1

    @property
    def extent(self) -> int:
        """Side length in level-0 pixels."""
        return self.patch_size * self.read_downsample

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "patch_size": self.patch_size,
                "read_downsample": self.read_downsample}

    @classmethod
    def from_dict(cls, d) -> "PatchCoord":
        return cls(int(d["x"]), int(d["y"]), int(d.get("patch_size", PATCH_SIZE)),
                   int(d.get("read_downsample", 1)))


@dataclass
class SegParams:
    sat_threshold: int = 8
    median_k: int = 7
    close_kernel: tuple[int, int] = (4, 4)
    min_contour_area: float = 16.0  # in patch areas at mask level
    min_hole_area: float = 4.0
    four_corner: bool = False


@dataclass
class Contour:
    outer: np.ndarray  # (K, 2) x, y at mask level
    holes: list[np.ndarray] = field(default_factory=list)


@dataclass
class TissueMask:
    level: int
    factor: int
    mask: np.ndarray  # uint8, 1 = tissue
    contours: list[Contour]

    @property
    def shape(self):
        return self.mask.shape


def median_filter(channel: np.ndarray, k: int, threads: int = 1) -> np.ndarray:
    """k x k median with edge-replicated borders; row bands are filtered in parallel."""
    if k < 1 or k % 2 == 0:
        raise ArgumentError(f"median kernel must be odd and >= 1, got {k}")
    channel = np.asarray(channel)
    if k == 1:
        return channel.copy()
    rows = channel.shape[0]
    threads = max(1, min(int(threads), rows))
    if threads == 1:
        return ndimage.median_filter(channel, size=k, mode="nearest")
    halo = k // 2
    bounds = np.linspace(0, rows, threads + 1).astype(int)

    def band(i):
        lo, hi = bounds[i], bounds[i + 1]
        a, b = max(0, lo - halo), min(rows, hi + halo)
        out = ndimage.median_filter(channel[a:b], size=k, mode="nearest")
        return out[lo - a : lo - a + (hi - lo)]

    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(band, range(threads)))
    return np.concatenate(parts, axis=0)


def _window_reduce(mask, kh, kw, top, left, reduce):
    padded = np.pad(mask, ((top, kh - 1 - top), (left, kw - 1 - left)), mode="edge")
    return reduce(sliding_window_view(padded, (kh, kw)), axis=(-2, -1))


def morph_close(mask: np.ndarray, kernel=(4, 4)) -> np.ndarray:
    """Dilation then erosion by a ``w x h`` block of ones, anchor at (w//2, h//2)."""
    kw, kh = int(kernel[0]), int(kernel[1])
    if kw < 1 or kh < 1:
        raise ArgumentError("kernel dimensions must be >= 1")
    m = (np.asarray(mask) > 0).astype(np.uint8)
    ay, ax = kh // 2, kw // 2
    dilated = _window_reduce(m, kh, kw, ay, ax, np.max)
    # erosion uses the reflected element so closing is extensive
    return _window_reduce(dilated, kh, kw, kh - 1 - ay, kw - 1 - ax, np.min)


def _patch_area_at(slide: PyramidSlide, factor: int) -> float:
    side = PATCH_SIZE * slide.read_downsample / factor
    return side * side


def segment_tissue(slide: PyramidSlide, params: SegParams | None = None, threads: int = 1) -> TissueMask:
    p = params or SegParams()
    level = best_level_for(slide, MASK_DOWNSAMPLE)
    factor = slide.levels[level].factor
    sat = saturation(slide.level_raster(level))
    blurred = median_filter(sat, p.median_k, threads=threads)
    mask = morph_close(blurred > p.sat_threshold, p.close_kernel)

    patch_area = _patch_area_at(slide, factor)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n:
        areas = ndimage.sum_labels(mask, labels, index=np.arange(1, n + 1))
        keep = np.flatnonzero(areas >= p.min_contour_area * patch_area) + 1
        mask = np.isin(labels, keep).astype(np.uint8)

    # holes: background components that do not touch the border
    bg_labels, nb = ndimage.label(mask == 0, structure=_FOUR)
    if nb:
        border = np.unique(np.concatenate([bg_labels[0], bg_labels[-1], bg_labels[:, 0], bg_labels[:, -1]]))
        hole_areas = ndimage.sum_labels(np.ones_like(mask), bg_labels, index=np.arange(1, nb + 1))
        small = [i + 1 for i, a in enumerate(hole_areas)
                 if (i + 1) not in border and a < p.min_hole_area * patch_area]
        if small:
            mask[np.isin(bg_labels, small)] = 1

    return TissueMask(level, factor, mask.astype(np.uint8), trace_contours(mask))


def trace_contours(mask: np.ndarray) -> list[Contour]:
    found, hierarchy = cv2.findContours(mask.astype(np.uint8), cv2.RETR_CCOMP, cv2.CHAIN_APPROX_NONE)
    if hierarchy is None:
        return []
    hierarchy = hierarchy[0]
    contours = []
    index = {}
    for i, (nxt, prev, child, parent) in enumerate(hierarchy):
        if parent < 0:
            index[i] = len(contours)
            contours.append(Contour(found[i].reshape(-1, 2)))
    for i, (nxt, prev, child, parent) in enumerate(hierarchy):
        if parent >= 0:
            contours[index[parent]].holes.append(found[i].reshape(-1, 2))
    # cv2 order depends on raster scan from the bottom; sort for a stable layout
    contours.sort(key=lambda c: (int(c.outer[:, 1].min()), int(c.outer[:, 0].min())))
    return contours


def _inside(mask: np.ndarray, x: float, y: float, factor: int) -> bool:
    mx, my = int(x // factor), int(y // factor)
    h, w = mask.shape
    return 0 <= mx < w and 0 <= my < h and mask[my, mx] == 1


def enumerate_patches(mask: TissueMask, slide: PyramidSlide, four_corner: bool = False) -> list[PatchCoord]:
    """Row-major non-overlapping grid; a cell is kept when its centre falls on tissue.

    The tissue region is the area enclosed by each retained contour minus
    its unfilled holes, i.e. exactly the final mask.
    """
    ds = slide.read_downsample
    stride = PATCH_SIZE * ds
    width, height = slide.dimensions
    coords = []
    for y in range(0, height - stride + 1, stride):
        for x in range(0, width - stride + 1, stride):
            if four_corner:
                pts = [(x, y), (x + stride - 1, y), (x, y + stride - 1), (x + stride - 1, y + stride - 1)]
                ok = all(_inside(mask.mask, px, py, mask.factor) for px, py in pts)
            else:
                ok = _inside(mask.mask, x + stride / 2, y + stride / 2, mask.factor)
            if ok:
                coords.append(PatchCoord(x, y, PATCH_SIZE, ds))
    return coords
