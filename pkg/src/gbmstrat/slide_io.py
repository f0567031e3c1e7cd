"""Pyramid-bundle slide storage.

A bundle is a directory holding ``manifest.json`` plus one lossless PNG per
pyramid level. Rasters are plain ``numpy`` arrays of shape (H, W, 3) or
(H, W), dtype uint8, RGB channel order.
"""
from __future__ import annotations

import io
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from ._io import atomic_write
from .errors import ArgumentError, BoundsError, FormatError, NotFound

SUPPORTED_OBJECTIVES = (20, 40)
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class Level:
    factor: int
    width: int
    height: int
    path: str


@dataclass
class PyramidSlide:
    slide_id: str
    levels: list[Level]
    root: Path
    objective_power: float | None = None
    mpp: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def dimensions(self) -> tuple[int, int]:
        return self.levels[0].width, self.levels[0].height

    @property
    def read_downsample(self) -> int:
        """Level-0 pixels per 20X-equivalent pixel."""
        return 2 if self.objective_power == 40 else 1

    def level_raster(self, level: int) -> np.ndarray:
        if not 0 <= level < len(self.levels):
            raise BoundsError(f"level {level} outside 0..{len(self.levels) - 1}")
        with self._lock:
            cached = self._cache.get(level)
            if cached is None:
                cached = _load_level(self.root, self.levels[level])
                cached.setflags(write=False)
                self._cache[level] = cached
        return cached

    def metadata(self) -> dict:
        return _manifest_dict(self.slide_id, self.levels, self.objective_power, self.mpp)


def _manifest_dict(slide_id, levels, objective_power, mpp) -> dict:
    return {
        "slide_id": slide_id,
        "objective_power": objective_power,
        "mpp": mpp,
        "levels": [
            {"factor": lv.factor, "width": lv.width, "height": lv.height, "path": lv.path}
            for lv in levels
        ],
    }


def _load_level(root: Path, level: Level) -> np.ndarray:
    png = root / level.path
    if not png.is_file():
        raise NotFound(f"level raster missing: {png}")
    with Image.open(png) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    if arr.shape[:2] != (level.height, level.width):
        raise FormatError(
            f"{png}: raster is {arr.shape[1]}x{arr.shape[0]}, manifest says {level.width}x{level.height}"
        )
    return arr


def validate_levels(levels: list[Level], objective_power=None, mpp=None) -> None:
    if not levels:
        raise FormatError("levels: bundle has no levels")
    if levels[0].factor != 1:
        raise FormatError("levels: level 0 must have downsample factor 1")
    for prev, cur in zip(levels, levels[1:]):
        if cur.factor <= prev.factor:
            raise FormatError("levels: downsample factors must be strictly increasing")
    w0, h0 = levels[0].width, levels[0].height
    if w0 <= 0 or h0 <= 0:
        raise FormatError("levels: level 0 has non-positive size")
    for k, lv in enumerate(levels):
        if abs(lv.width - w0 / lv.factor) > 1 or abs(lv.height - h0 / lv.factor) > 1:
            raise FormatError(
                f"levels[{k}]: size {lv.width}x{lv.height} not within 1 px of level0/{lv.factor}"
            )
    if objective_power is not None and objective_power not in SUPPORTED_OBJECTIVES:
        raise FormatError(f"objective_power: {objective_power} not in {SUPPORTED_OBJECTIVES}")
    if mpp is not None and not mpp > 0:
        raise FormatError("mpp: must be positive")


def open_bundle(path) -> PyramidSlide:
    root = Path(path)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise NotFound(f"no {MANIFEST} in {root}")
    try:
        doc = json.loads(manifest.read_text(encoding="utf-8"))
        levels = [
            Level(int(lv["factor"]), int(lv["width"]), int(lv["height"]), str(lv["path"]))
            for lv in doc["levels"]
        ]
        slide_id = str(doc["slide_id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{manifest}: malformed manifest ({exc})") from exc
    objective = doc.get("objective_power")
    mpp = doc.get("mpp")
    validate_levels(levels, objective, mpp)
    return PyramidSlide(slide_id, levels, root, objective, mpp)


def box_downsample(raster: np.ndarray, factor: int) -> np.ndarray:
    """Average ``factor`` x ``factor`` blocks, rounding half up; trailing partial blocks are cropped."""
    if factor == 1:
        return raster.copy()
    h, w = raster.shape[0] // factor, raster.shape[1] // factor
    blocks = raster[: h * factor, : w * factor].astype(np.int64)
    blocks = blocks.reshape(h, factor, w, factor, *raster.shape[2:])
    sums = blocks.sum(axis=(1, 3))
    n = factor * factor
    return ((2 * sums + n) // (2 * n)).astype(np.uint8)


def _encode_png(raster: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(raster).save(buf, format="PNG")
    return buf.getvalue()


def build_pyramid(flat, factors, slide_id, out_dir, objective_power=None, mpp=None) -> PyramidSlide:
    flat = np.asarray(flat)
    if flat.ndim != 3 or flat.shape[2] != 3 or flat.dtype != np.uint8:
        raise ArgumentError("build_pyramid needs an (H, W, 3) uint8 raster")
    factors = [int(f) for f in factors]
    if not factors or factors[0] != 1:
        raise ArgumentError("factors must start at 1")
    if any(b <= a for a, b in zip(factors, factors[1:])):
        raise ArgumentError("factors must be strictly increasing")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    levels = []
    for k, f in enumerate(factors):
        raster = box_downsample(flat, f)
        if raster.shape[0] == 0 or raster.shape[1] == 0:
            raise ArgumentError(f"factor {f} leaves an empty level")
        name = f"level_{k}.png"
        atomic_write(out / name, _encode_png(raster))
        levels.append(Level(f, raster.shape[1], raster.shape[0], name))
    validate_levels(levels, objective_power, mpp)
    doc = _manifest_dict(slide_id, levels, objective_power, mpp)
    atomic_write(out / MANIFEST, json.dumps(doc, indent=2) + "\n")
    return PyramidSlide(slide_id, levels, out, objective_power, mpp)


def read_region(slide: PyramidSlide, level: int, x: int, y: int, w: int, h: int) -> np.ndarray:
    lv = slide.levels[level] if 0 <= level < len(slide.levels) else None
    if lv is None:
        raise BoundsError(f"level {level} does not exist")
    if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > lv.width or y + h > lv.height:
        raise BoundsError(
            f"region ({x},{y},{w},{h}) outside level {level} of size {lv.width}x{lv.height}"
        )
    return slide.level_raster(level)[y : y + h, x : x + w].copy()


def best_level_for(slide: PyramidSlide, target_downsample: float) -> int:
    """Index of the level with the largest factor not exceeding ``target_downsample``."""
    best = 0
    for k, lv in enumerate(slide.levels):
        if lv.factor <= target_downsample:
            best = k
    return best


def area_resize(raster: np.ndarray, width: int, height: int) -> np.ndarray:
    if raster.shape[1] == width and raster.shape[0] == height:
        return raster
    ratio_x, ratio_y = raster.shape[1] / width, raster.shape[0] / height
    if ratio_x == ratio_y and ratio_x.is_integer():
        return box_downsample(raster, int(ratio_x))
    return cv2.resize(raster, (width, height), interpolation=cv2.INTER_AREA)


def read_patch(slide: PyramidSlide, x0: int, y0: int, size: int, downsample: float) -> np.ndarray:
    """Read a ``size`` x ``size`` patch covering ``size*downsample`` level-0 pixels at (x0, y0)."""
    level = best_level_for(slide, downsample)
    factor = slide.levels[level].factor
    extent = int(round(size * downsample / factor))
    region = read_region(slide, level, x0 // factor, y0 // factor, extent, extent)
    return area_resize(region, size, size)
