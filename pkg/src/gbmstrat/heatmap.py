"""Attention heatmap overlays on a downsampled slide image."""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.stats import rankdata

from ._io import atomic_write, round_half_up
from .errors import ArgumentError
from .slide_io import PyramidSlide, best_level_for

# diverging blue-grey-red ramp
DEFAULT_CONTROL_POINTS = ((0.0, (59, 76, 192)), (0.5, (221, 221, 221)), (1.0, (180, 4, 38)))


@dataclass
class HeatmapParams:
    overlay_alpha: float = 0.5
    normalization: str = "percentile-rank"
    output_level_downsample: int = 16
    control_points: tuple = field(default=DEFAULT_CONTROL_POINTS)

    def __post_init__(self):
        if not 0.0 <= self.overlay_alpha <= 1.0:
            raise ArgumentError("overlay_alpha must lie in [0, 1]")
        if self.normalization not in ("percentile-rank", "min-max"):
            raise ArgumentError(f"unknown normalization {self.normalization!r}")
        pos = [float(p) for p, _ in self.control_points]
        if pos[0] != 0.0 or pos[-1] != 1.0 or any(b <= a for a, b in zip(pos, pos[1:])):
            raise ArgumentError("control points must run monotonically from 0 to 1")


def normalize_scores(attention, mode: str = "percentile-rank") -> np.ndarray:
    a = np.asarray(attention, dtype=np.float64)
    if a.size == 0:
        raise ArgumentError("no scores to normalise")
    if mode == "percentile-rank":
        return (rankdata(a, method="average") - 0.5) / a.size
    if mode == "min-max":
        lo, hi = a.min(), a.max()
        if hi == lo:
            return np.full(a.shape, 0.5)
        return (a - lo) / (hi - lo)
    raise ArgumentError(f"unknown normalization {mode!r}")


def colormap(t, control_points=DEFAULT_CONTROL_POINTS) -> np.ndarray:
    """Piecewise-linear RGB ramp; accepts a scalar or an array of positions."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    xs = np.array([p for p, _ in control_points], dtype=np.float64)
    cols = np.array([c for _, c in control_points], dtype=np.float64)
    out = np.stack([np.interp(t, xs, cols[:, ch]) for ch in range(3)], axis=-1)
    return round_half_up(out).astype(np.uint8)


def _footprint(coord, factor, shape):
    x0 = coord.x // factor
    y0 = coord.y // factor
    x1 = min(shape[1], (coord.x + coord.extent) // factor)
    y1 = min(shape[0], (coord.y + coord.extent) // factor)
    return y0, y1, x0, x1


def render_heatmap(slide: PyramidSlide, coords, attention, params: HeatmapParams | None = None,
                   out_path=None) -> np.ndarray:
    p = params or HeatmapParams()
    coords = list(coords)
    attention = np.asarray(attention, dtype=np.float64)
    if len(coords) != attention.shape[0]:
        raise ArgumentError(f"{len(coords)} coords but {attention.shape[0]} scores")
    level = best_level_for(slide, p.output_level_downsample)
    factor = slide.levels[level].factor
    base = np.array(slide.level_raster(level))
    out = base.copy()
    if coords:
        colors = colormap(normalize_scores(attention, p.normalization), p.control_points).astype(np.float64)
        alpha = p.overlay_alpha
        # footprints come from a non-overlapping grid; if imported coords overlap, last writer wins
        for coord, color in zip(coords, colors):
            y0, y1, x0, x1 = _footprint(coord, factor, base.shape)
            if y1 <= y0 or x1 <= x0:
                continue
            region = base[y0:y1, x0:x1].astype(np.float64)
            out[y0:y1, x0:x1] = round_half_up(alpha * color + (1.0 - alpha) * region).astype(np.uint8)
    if out_path is not None:
        buf = io.BytesIO()
        Image.fromarray(out).save(buf, format="PNG")
        atomic_write(out_path, buf.getvalue())
        side = {"slide_id": slide.slide_id, "level": level, "factor": factor, "n_patches": len(coords),
                "params": asdict(p)}
        atomic_write(Path(str(out_path) + ".json"), json.dumps(side, indent=2, sort_keys=True) + "\n")
    return out
