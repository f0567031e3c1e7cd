"""Patch-level artifact filters: background, glass/reflection, pen marking."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import tomli

from ._io import atomic_write
from .colorops import StainMatrix, rgb_to_eosin_intensity, rgb_to_hsv
from .slide_io import PyramidSlide, read_patch
from .tissue_seg import PatchCoord

REASONS = ("rgb_background", "hsv_artifact", "pen_marking")


@dataclass
class CurationParams:
    white_min: int = 230
    black_max: int = 25
    background_max_frac: float = 0.60
    hsv_s_max: int = 25
    hsv_v_min: int = 230
    hsv_max_frac: float = 0.95
    eosin_max: int = 50
    pen_max_frac: float = 0.80

    @classmethod
    def load(cls, path) -> "CurationParams":
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
        doc = doc.get("curation", doc)
        return cls(**{k: v for k, v in doc.items() if k in cls.__dataclass_fields__})


def _exceeds(count: int, total: int, frac: float) -> bool:
    # exact rational comparison so a patch sitting on the threshold is kept
    limit = Fraction(frac).limit_denominator(10**6)
    return count * limit.denominator > limit.numerator * total


def filter_rgb_background(patch, params: CurationParams | None = None) -> tuple[bool, float]:
    p = params or CurationParams()
    px = np.asarray(patch).reshape(-1, 3)
    white = np.all(px >= p.white_min, axis=1)
    black = np.all(px <= p.black_max, axis=1)
    count = int(np.count_nonzero(white | black))
    return not _exceeds(count, len(px), p.background_max_frac), count / len(px)


def filter_hsv_artifact(patch, params: CurationParams | None = None) -> tuple[bool, float]:
    p = params or CurationParams()
    hsv = rgb_to_hsv(np.asarray(patch)).reshape(-1, 3)
    count = int(np.count_nonzero((hsv[:, 1] <= p.hsv_s_max) & (hsv[:, 2] >= p.hsv_v_min)))
    return not _exceeds(count, len(hsv), p.hsv_max_frac), count / len(hsv)


def filter_pen_marking(patch, params: CurationParams | None = None,
                       stains: StainMatrix | None = None) -> tuple[bool, float]:
    p = params or CurationParams()
    eosin = rgb_to_eosin_intensity(np.asarray(patch).reshape(-1, 3), stains)
    count = int(np.count_nonzero(eosin <= p.eosin_max))
    return not _exceeds(count, len(eosin), p.pen_max_frac), count / len(eosin)


@dataclass
class PatchDecision:
    coord: PatchCoord
    kept: bool
    reject_reason: str | None
    fractions: dict = field(default_factory=dict)
    error: str | None = None

    def to_json(self) -> str:
        rec = {"coord": self.coord.to_dict(), "kept": self.kept,
               "reject_reason": self.reject_reason, "fractions": self.fractions}
        if self.error is not None:
            rec["error"] = self.error
        return json.dumps(rec, sort_keys=True)


@dataclass
class CurationReport:
    slide_id: str
    records: list[PatchDecision]

    @property
    def kept_coords(self) -> list[PatchCoord]:
        return [r.coord for r in self.records if r.kept]

    def to_jsonl(self) -> str:
        head = json.dumps({"slide_id": self.slide_id, "n_patches": len(self.records)}, sort_keys=True)
        return "\n".join([head] + [r.to_json() for r in self.records]) + "\n"

    def write(self, path) -> None:
        atomic_write(path, self.to_jsonl())


def evaluate_patch(patch, params: CurationParams | None = None,
                   stains: StainMatrix | None = None) -> tuple[str | None, dict]:
    fractions = {"white_black_frac": None, "hsv_frac": None, "eosin_low_frac": None}
    keep, fractions["white_black_frac"] = filter_rgb_background(patch, params)
    if not keep:
        return "rgb_background", fractions
    keep, fractions["hsv_frac"] = filter_hsv_artifact(patch, params)
    if not keep:
        return "hsv_artifact", fractions
    keep, fractions["eosin_low_frac"] = filter_pen_marking(patch, params, stains)
    if not keep:
        return "pen_marking", fractions
    return None, fractions


def curate(slide: PyramidSlide, coords, params: CurationParams | None = None,
           stains: StainMatrix | None = None, threads: int = 1) -> CurationReport:
    def one(coord: PatchCoord) -> PatchDecision:
        try:
            patch = read_patch(slide, coord.x, coord.y, coord.patch_size, coord.read_downsample)
        except Exception as exc:  # per-patch failure must not stop the slide
            return PatchDecision(coord, False, "read_error", {}, error=str(exc))
        reason, fractions = evaluate_patch(patch, params, stains)
        return PatchDecision(coord, reason is None, reason, fractions)

    coords = list(coords)
    if threads > 1 and len(coords) > 1:
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(one, coords))
    else:
        records = [one(c) for c in coords]
    return CurationReport(slide.slide_id, records)


def read_report(path) -> CurationReport:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    head = json.loads(lines[0])
    records = []
    for ln in lines[1:]:
        d = json.loads(ln)
        records.append(PatchDecision(PatchCoord.from_dict(d["coord"]), d["kept"], d["reject_reason"],
                                     d["fractions"], d.get("error")))
    return CurationReport(head["slide_id"], records)


def params_dict(params: CurationParams) -> dict:
    return asdict(params)
