"""TOML pipeline configuration with command-line overrides.

Sections: ``[paths]``, ``[experiment]``, ``[curation]``, ``[segmentation]``,
``[mil]``, ``[gbdt]``, ``[heatmap]``, ``[shap]``. Relative paths resolve
against the directory holding the config file.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from ._io import atomic_write
from .clinical.gbdt import GbdtHyper
from .curation import CurationParams
from .errors import ArgumentError, ConfigError, NotFound
from .heatmap import HeatmapParams
from .mil.model import MilHyper
from .tissue_seg import SegParams

PATH_KEYS = ("manifest", "clinical", "bags_dir", "out_dir")


@dataclass
class PipelineConfig:
    manifest: Path | None = None
    clinical: Path | None = None
    bags_dir: Path | None = None
    out_dir: Path = Path("out")
    seed: int = 0
    n_folds: int = 10
    threads: int = 1
    curation: CurationParams = field(default_factory=CurationParams)
    segmentation: SegParams = field(default_factory=SegParams)
    mil: MilHyper = field(default_factory=MilHyper)
    gbdt: GbdtHyper = field(default_factory=GbdtHyper)
    heatmap: HeatmapParams = field(default_factory=HeatmapParams)
    shap_pair: tuple = ("age_years", "sex")
    shap_mode: str = "path-dependent"
    source: Path | None = None

    def validate(self, need_manifest: bool = False) -> None:
        if self.n_folds < 1:
            raise ConfigError("n_folds must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if need_manifest:
            if self.manifest is None:
                raise ConfigError("config has no paths.manifest")
            if not self.manifest.is_file():
                raise NotFound(f"cohort manifest not found: {self.manifest}")
            if self.clinical is not None and not self.clinical.is_file():
                raise NotFound(f"clinical CSV not found: {self.clinical}")
        try:
            self.mil.validate()
            GbdtHyper(**dataclasses.asdict(self.gbdt))
            HeatmapParams(**dataclasses.asdict(self.heatmap))
        except ArgumentError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        paths = {k: str(getattr(self, k)) for k in PATH_KEYS if getattr(self, k) is not None}
        seg = dataclasses.asdict(self.segmentation)
        seg["close_kernel"] = list(seg["close_kernel"])
        heat = dataclasses.asdict(self.heatmap)
        heat["control_points"] = [[float(p), list(c)] for p, c in heat["control_points"]]
        return {
            "paths": paths,
            "experiment": {"seed": self.seed, "n_folds": self.n_folds, "threads": self.threads},
            "curation": dataclasses.asdict(self.curation),
            "segmentation": seg,
            "mil": self.mil.to_dict(),
            "gbdt": self.gbdt.to_dict(),
            "heatmap": heat,
            "shap": {"pair": list(self.shap_pair), "mode": self.shap_mode},
        }

    def write_resolved(self, out_dir=None) -> Path:
        target = Path(out_dir or self.out_dir) / "config.resolved.toml"
        atomic_write(target, tomli_w.dumps(self.to_dict()))
        return target


def _build(cls, section: dict, name: str):
    unknown = set(section) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys {sorted(unknown)}")
    try:
        return cls(**section)
    except (ArgumentError, TypeError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def from_dict(doc: dict, base_dir: Path | None = None) -> PipelineConfig:
    base_dir = Path(base_dir or ".")
    known = {"paths", "experiment", "curation", "segmentation", "mil", "gbdt", "heatmap", "shap"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    cfg = PipelineConfig()
    paths = doc.get("paths", {})
    for key, value in paths.items():
        if key not in PATH_KEYS:
            raise ConfigError(f"[paths] has unknown key {key!r}")
        p = Path(value)
        setattr(cfg, key, p if p.is_absolute() else (base_dir / p))
    exp = doc.get("experiment", {})
    for key in exp:
        if key not in ("seed", "n_folds", "threads"):
            raise ConfigError(f"[experiment] has unknown key {key!r}")
    cfg.seed = int(exp.get("seed", cfg.seed))
    cfg.n_folds = int(exp.get("n_folds", cfg.n_folds))
    cfg.threads = int(exp.get("threads", cfg.threads))
    cfg.curation = _build(CurationParams, doc.get("curation", {}), "curation")
    seg = dict(doc.get("segmentation", {}))
    if "close_kernel" in seg:
        seg["close_kernel"] = tuple(seg["close_kernel"])
    cfg.segmentation = _build(SegParams, seg, "segmentation")
    cfg.mil = _build(MilHyper, doc.get("mil", {}), "mil")
    gb = dict(doc.get("gbdt", {}))
    if "lambda" in gb:
        gb["reg_lambda"] = gb.pop("lambda")
    cfg.gbdt = _build(GbdtHyper, gb, "gbdt")
    heat = dict(doc.get("heatmap", {}))
    if "control_points" in heat:
        heat["control_points"] = tuple((float(p), tuple(int(v) for v in c)) for p, c in heat["control_points"])
    cfg.heatmap = _build(HeatmapParams, heat, "heatmap")
    shap = doc.get("shap", {})
    cfg.shap_pair = tuple(shap.get("pair", cfg.shap_pair))
    cfg.shap_mode = shap.get("mode", cfg.shap_mode)
    if len(cfg.shap_pair) != 2:
        raise ConfigError("[shap] pair must name two features")
    return cfg


def load_config(path=None, seed: int | None = None, threads: int | None = None,
                out_dir=None) -> PipelineConfig:
    """Parse ``path`` (or use defaults) and apply flag overrides, which win."""
    if path is None:
        cfg = PipelineConfig()
    else:
        path = Path(path)
        if not path.is_file():
            raise NotFound(f"config file not found: {path}")
        try:
            with open(path, "rb") as fh:
                doc = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = from_dict(doc, path.parent)
        cfg.source = path
    if seed is not None:
        cfg.seed = int(seed)
    if threads is not None:
        cfg.threads = int(threads)
    if out_dir is not None:
        cfg.out_dir = Path(out_dir)
    cfg.validate()
    return cfg
