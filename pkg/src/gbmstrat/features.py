"""Per-slide bags of patch feature vectors.

Binary layout (little-endian)::

    b"PBAG" | u32 version=1 | u32 N | u32 D | N*D float32 row-major
    | N * (u64 x, u64 y, u32 patch_size, u32 read_downsample)
    | u32 len + UTF-8 slide_id | u32 len + UTF-8 extractor_tag
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write
from .colorops import rgb_to_hsv
from .errors import ArgumentError, FormatError, NotFound
from .tissue_seg import PATCH_SIZE, PatchCoord

MAGIC = b"PBAG"
VERSION = 1
DEFAULT_DIM = 1024
_COORD = np.dtype([("x", "<u8"), ("y", "<u8"), ("patch_size", "<u4"), ("read_downsample", "<u4")])


@dataclass
class PatchBag:
    slide_id: str
    features: np.ndarray  # (N, D) float32
    coords: list[PatchCoord]
    extractor_tag: str = "baseline-v1"

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise FormatError("features must be a 2-D matrix")
        if len(self.coords) != self.features.shape[0]:
            raise FormatError(f"{len(self.coords)} coords for {self.features.shape[0]} feature rows")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def trainable(self) -> bool:
        return self.n >= 1

    def __eq__(self, other):
        if not isinstance(other, PatchBag):
            return NotImplemented
        return (self.slide_id == other.slide_id and self.extractor_tag == other.extractor_tag
                and self.coords == other.coords and self.features.shape == other.features.shape
                and self.features.tobytes() == other.features.tobytes())


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def bag_bytes(bag: PatchBag) -> bytes:
    coords = np.zeros(bag.n, dtype=_COORD)
    for i, c in enumerate(bag.coords):
        coords[i] = (c.x, c.y, c.patch_size, c.read_downsample)
    return b"".join([
        MAGIC,
        struct.pack("<III", VERSION, bag.n, bag.dim),
        bag.features.astype("<f4").tobytes(),
        coords.tobytes(),
        _pack_str(bag.slide_id),
        _pack_str(bag.extractor_tag),
    ])


def write_bag(bag: PatchBag, path) -> None:
    atomic_write(path, bag_bytes(bag))


def parse_bag(buf: bytes, source="<bytes>") -> PatchBag:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise FormatError(f"{source}: not a patch bag (bad magic)")
    version, n, d = struct.unpack_from("<III", buf, 4)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported bag version {version}")
    off = 16
    need = off + n * d * 4 + n * _COORD.itemsize + 4
    if len(buf) < need:
        raise FormatError(f"{source}: truncated ({len(buf)} bytes, need at least {need})")
    feats = np.frombuffer(buf, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += n * d * 4
    rec = np.frombuffer(buf, dtype=_COORD, count=n, offset=off)
    off += n * _COORD.itemsize
    strings = []
    for _ in range(2):
        if off + 4 > len(buf):
            raise FormatError(f"{source}: truncated string table")
        (ln,) = struct.unpack_from("<I", buf, off)
        off += 4
        if off + ln > len(buf):
            raise FormatError(f"{source}: truncated string table")
        strings.append(buf[off : off + ln].decode("utf-8"))
        off += ln
    coords = [PatchCoord(int(r["x"]), int(r["y"]), int(r["patch_size"]), int(r["read_downsample"]))
              for r in rec]
    return PatchBag(strings[0], feats.astype(np.float32), coords, strings[1])


def read_bag(path) -> PatchBag:
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"bag not found: {path}")
    return parse_bag(path.read_bytes(), str(path))


def extract_baseline_features(patch) -> np.ndarray:
    """1024 values: 256-bin H, S, V histograms (each sums to 1) and a 16x16 grey thumbnail in [0, 1]."""
    patch = np.asarray(patch)
    if patch.shape != (PATCH_SIZE, PATCH_SIZE, 3) or patch.dtype != np.uint8:
        raise ArgumentError(f"baseline extractor needs a 256x256x3 uint8 patch, got {patch.shape}")
    hsv = rgb_to_hsv(patch).reshape(-1, 3)
    total = hsv.shape[0]
    hists = [np.bincount(hsv[:, c], minlength=256) / total for c in range(3)]
    grey = patch.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    thumb = grey.reshape(16, 16, 16, 16).mean(axis=(1, 3)) / 255.0
    return np.concatenate(hists + [thumb.ravel()]).astype(np.float32)


def import_external_features(matrix_path, coords_path, slide_id: str, dim: int = DEFAULT_DIM) -> PatchBag:
    """Raw little-endian float32 matrix plus JSON-lines coordinates."""
    raw = np.fromfile(matrix_path, dtype="<f4")
    coords = [PatchCoord.from_dict(json.loads(ln))
              for ln in Path(coords_path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if raw.size != len(coords) * dim:
        raise FormatError(
            f"{matrix_path}: {raw.size} values is not {len(coords)} coords x dim {dim}"
        )
    feats = raw.reshape(len(coords), dim)
    bad = np.flatnonzero(~np.all(np.isfinite(feats), axis=1))
    if bad.size:
        raise FormatError(f"{matrix_path}: non-finite values in rows {bad.tolist()}")
    return PatchBag(slide_id, feats, coords, "external")
