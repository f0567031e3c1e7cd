"""Colour-space conversions and Ruifrok-Johnston stain deconvolution.

All functions are vectorised: pixel arrays have a trailing axis of length 3.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import round_half_up
from .errors import FormatError

# Ruifrok & Johnston H&E-DAB optical-density directions, normalised on use.
DEFAULT_STAIN_VECTORS = (
    (0.65, 0.70, 0.29),
    (0.07, 0.99, 0.11),
    (0.27, 0.57, 0.78),
)


@dataclass(frozen=True)
class StainMatrix:
    """Rows are unit OD vectors for hematoxylin, eosin, DAB."""

    matrix: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_vectors(cls, vectors) -> "StainMatrix":
        m = np.asarray(vectors, dtype=np.float64)
        if m.shape != (3, 3):
            raise FormatError(f"stain matrix must be 3x3, got {m.shape}")
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        if np.any(norms == 0) or not np.all(np.isfinite(m)):
            raise FormatError("stain vectors must be finite and non-zero")
        m = m / norms
        if not np.isfinite(np.linalg.cond(m)) or abs(np.linalg.det(m)) < 1e-12:
            raise FormatError("stain vectors are linearly dependent")
        inv = np.linalg.inv(m)
        m.setflags(write=False)
        inv.setflags(write=False)
        return cls(m, inv)

    @classmethod
    def default(cls) -> "StainMatrix":
        return cls.from_vectors(DEFAULT_STAIN_VECTORS)

    @classmethod
    def load(cls, path) -> "StainMatrix":
        """Read ``stains.json``: a list of three triples or a dict keyed hematoxylin/eosin/dab."""
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(doc, dict):
            try:
                doc = [doc["hematoxylin"], doc["eosin"], doc["dab"]]
            except KeyError as exc:
                raise FormatError(f"{path}: missing stain {exc}") from exc
        return cls.from_vectors(doc)


def rgb_to_hsv(rgb) -> np.ndarray:
    """Hexcone HSV with all three components on a 0-255 scale (hue spans the full circle)."""
    rgb = np.asarray(rgb)
    c = rgb.astype(np.float64)
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    mx = c.max(axis=-1)
    mn = c.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta == 0, 1.0, delta)
    hue = np.where(
        mx == r,
        np.mod((g - b) / safe, 6.0),
        np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    hue = np.where(delta == 0, 0.0, hue) / 6.0  # fraction of the circle
    sat = np.where(mx == 0, 0.0, delta / np.where(mx == 0, 1.0, mx))
    out = np.empty(rgb.shape, dtype=np.uint8)
    out[..., 0] = np.minimum(round_half_up(hue * 255.0), 255)
    out[..., 1] = round_half_up(sat * 255.0)
    out[..., 2] = mx.astype(np.uint8)
    return out


def saturation(rgb) -> np.ndarray:
    return rgb_to_hsv(rgb)[..., 1]


def rgb_to_od(rgb) -> np.ndarray:
    """Optical density ``-log10(max(I, 1) / 255)`` per channel."""
    i = np.maximum(np.asarray(rgb, dtype=np.float64), 1.0)
    return -np.log10(i / 255.0)


def od_to_rgb(od) -> np.ndarray:
    """Inverse of :func:`rgb_to_od` quantised to 8 bits."""
    t = 255.0 * np.power(10.0, -np.asarray(od, dtype=np.float64))
    return np.clip(round_half_up(t), 0, 255).astype(np.uint8)


def deconvolve(od, stains: StainMatrix | None = None) -> np.ndarray:
    """Solve ``od = c_h*s_H + c_e*s_E + c_d*s_D``; concentrations are not clamped."""
    stains = stains or StainMatrix.default()
    return np.asarray(od, dtype=np.float64) @ stains.inverse


def compose(concentrations, stains: StainMatrix | None = None) -> np.ndarray:
    stains = stains or StainMatrix.default()
    return np.asarray(concentrations, dtype=np.float64) @ stains.matrix


def eosin_intensity(c_e) -> np.ndarray:
    """Transmittance-style 8-bit value of an eosin concentration (0 -> 255, 1 -> 26)."""
    c = np.maximum(np.asarray(c_e, dtype=np.float64), 0.0)
    return np.clip(round_half_up(255.0 * np.power(10.0, -c)), 0, 255).astype(np.uint8)


def rgb_to_eosin_intensity(rgb, stains: StainMatrix | None = None) -> np.ndarray:
    return eosin_intensity(deconvolve(rgb_to_od(rgb), stains)[..., 1])
