"""Ten-fold imaging / clinical / fusion experiment driver and subgroup harness."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .._io import atomic_write
from ..clinical.gbdt import train_gbdt
from ..config import PipelineConfig
from ..errors import ArgumentError, ConfigError, FormatError, NotFound
from ..features import read_bag
from ..mil.checkpoint import write_checkpoint, write_history
from ..mil.train import fit, predict
from .cohort import CohortCase, check_resolvable, labelled, labelling_report, load_cohort
from .metrics import accuracy, auc, fuse
from .splits import FoldSplit, monte_carlo_splits

log = logging.getLogger(__name__)

MODELS = ("imaging", "clinical", "fusion")
METRIC_COLUMNS = ("val_auc", "val_acc", "test_auc", "test_acc")
SUBGROUPS = {"sex": ("male", "female"), "mgmt": ("methylated", "unmethylated")}


def _num(v: float) -> str:
    return "nan" if np.isnan(v) else f"{v:.6f}"


@dataclass
class MetricsReport:
    model: str
    rows: list[dict] = field(default_factory=list)
    subgroup: str | None = None

    @property
    def mean(self) -> dict:
        out = {}
        for col in METRIC_COLUMNS:
            vals = np.array([r[col] for r in self.rows], dtype=np.float64)
            out[col] = float(np.nanmean(vals)) if np.any(~np.isnan(vals)) else float("nan")
        return out

    def to_csv(self) -> str:
        lines = ["fold," + ",".join(METRIC_COLUMNS)]
        for r in self.rows:
            lines.append(f"{r['fold']}," + ",".join(_num(r[c]) for c in METRIC_COLUMNS))
        m = self.mean
        lines.append("mean," + ",".join(_num(m[c]) for c in METRIC_COLUMNS))
        return "\n".join(lines) + "\n"


def _safe_auc(p, y) -> float:
    try:
        return auc(p, y)
    except ArgumentError:
        return float("nan")


def _metrics(p_val, y_val, p_test, y_test) -> dict:
    return {"val_auc": _safe_auc(p_val, y_val), "val_acc": accuracy(p_val, y_val),
            "test_auc": _safe_auc(p_test, y_test), "test_acc": accuracy(p_test, y_test)}


def _needs(models):
    imaging = "imaging" in models or "fusion" in models
    clinical = "clinical" in models or "fusion" in models
    return imaging, clinical


def _load_bags(cases: list[CohortCase]) -> dict:
    bags = {}
    for c in cases:
        try:
            bag = read_bag(c.bag_path)
        except (NotFound, FormatError) as exc:
            raise ConfigError(f"case {c.case_id}: {exc}") from exc
        if not bag.trainable:
            raise ConfigError(f"case {c.case_id}: bag has no patches")
        bags[c.case_id] = bag
    return bags


def _run_fold(split: FoldSplit, by_id, bags, config: PipelineConfig, models, model_dir: Path | None):
    want_img, want_clin = _needs(models)
    parts = {"train": split.train, "val": split.val, "test": split.test}
    y = {k: np.array([by_id[c].label_code for c in v]) for k, v in parts.items()}
    probs = {}
    fold_seed = config.seed + split.fold
    if want_img:
        hyper = dataclasses.replace(config.mil, seed=fold_seed)
        train_items = [(bags[c], by_id[c].label_code) for c in split.train]
        val_items = [(bags[c], by_id[c].label_code) for c in split.val]
        model, history = fit(train_items, val_items, hyper)
        probs["imaging"] = {k: np.array([predict(model, bags[c])["probability_long"] for c in v])
                            for k, v in parts.items() if k != "train"}
        if model_dir is not None:
            write_checkpoint(model, model_dir / f"fold_{split.fold}" / "mil.milc", hyper)
            write_history(history, model_dir / f"fold_{split.fold}" / "mil_history.csv")
    if want_clin:
        hyper = dataclasses.replace(config.gbdt, seed=fold_seed)
        rec = {k: [by_id[c].clinical for c in v] for k, v in parts.items()}
        gbdt, _ = train_gbdt(rec["train"], y["train"], hyper, eval_set=(rec["val"], y["val"]))
        probs["clinical"] = {k: gbdt.predict_proba(rec[k]) for k in ("val", "test")}
        if model_dir is not None:
            gbdt.save(model_dir / f"fold_{split.fold}" / "gbdt.json")
    if "fusion" in models:
        probs["fusion"] = {k: fuse(probs["imaging"][k], probs["clinical"][k]) for k in ("val", "test")}
    rows = {}
    for m in models:
        rows[m] = {"fold": split.fold, **_metrics(probs[m]["val"], y["val"], probs[m]["test"], y["test"])}
    cols = [m for m in MODELS if m in probs]
    lines = ["case_id,partition,label," + ",".join(f"p_{m}" for m in cols)]
    for part in ("val", "test"):
        for i, cid in enumerate(parts[part]):
            vals = ",".join(repr(float(probs[m][part][i])) for m in cols)
            lines.append(f"{cid},{part},{by_id[cid].label_code},{vals}")
    return rows, "\n".join(lines) + "\n"


def run_on_cases(cases: list[CohortCase], config: PipelineConfig, models=MODELS, out_dir=None,
                 subgroup: str | None = None) -> dict[str, MetricsReport]:
    """Evaluate ``models`` over the Monte Carlo folds of the labelled ``cases``."""
    models = tuple(m for m in MODELS if m in models)
    if not models:
        raise ArgumentError("no models requested")
    cohort = labelled(cases)
    want_img, want_clin = _needs(models)
    check_resolvable(cohort, want_img, want_clin)
    try:
        splits = monte_carlo_splits(cohort, config.n_folds, config.seed)
    except ArgumentError as exc:
        raise ConfigError(f"cannot split cohort{' ' + subgroup if subgroup else ''}: {exc}") from exc
    by_id = {c.case_id: c for c in cohort}
    bags = _load_bags(cohort) if want_img else {}
    out_dir = Path(out_dir) if out_dir is not None else None
    model_dir = out_dir / "models" if out_dir is not None else None

    def job(split):
        return _run_fold(split, by_id, bags, config, models, model_dir)

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(job, splits))
    else:
        results = [job(s) for s in splits]
    reports = {m: MetricsReport(m, [r[0][m] for r in results], subgroup) for m in models}
    if out_dir is not None:
        tag = "_".join(models) if len(models) > 1 else models[0]
        for split, (_, pred) in zip(splits, results):
            atomic_write(out_dir / tag / f"predictions_fold{split.fold}.csv", pred)
    return reports


def run_experiment(config: PipelineConfig, models=MODELS, write: bool = True) -> dict[str, MetricsReport]:
    """Load the configured cohort, evaluate, and write ``table_<model>.csv`` per model."""
    config.validate(need_manifest=True)
    cases = load_cohort(config.manifest, config.clinical, config.bags_dir)
    out_dir = Path(config.out_dir) if write else None
    reports = run_on_cases(cases, config, models, out_dir)
    if write:
        atomic_write(out_dir / "labels.csv", labelling_report(cases))
        for m, rep in reports.items():
            atomic_write(out_dir / f"table_{m}.csv", rep.to_csv())
        config.write_resolved(out_dir)
    return reports


def subgroup_cases(cases, criterion: str, value: str) -> list[CohortCase]:
    attr = "sex" if criterion == "sex" else "mgmt"
    return [c for c in cases if getattr(c, attr) == value]


SUBGROUP_HEADER = ("criterion,subgroup,n_samples,n_short,n_long,"
                   "imaging_auc,imaging_acc,clinical_auc,clinical_acc,fusion_auc,fusion_acc")


def subgroup_run(config: PipelineConfig, criterion: str, write: bool = True) -> list[dict]:
    """Rerun all three models inside each subgroup; rows hold mean test AUC/accuracy."""
    if criterion not in SUBGROUPS:
        raise ArgumentError(f"criterion must be one of {sorted(SUBGROUPS)}")
    config.validate(need_manifest=True)
    cases = load_cohort(config.manifest, config.clinical, config.bags_dir)
    out_dir = Path(config.out_dir)
    rows = []
    for value in SUBGROUPS[criterion]:
        sub = labelled(subgroup_cases(cases, criterion, value))
        n_long = sum(c.label_code for c in sub)
        n_short = len(sub) - n_long
        if min(n_short, n_long) < 3:
            raise ConfigError(f"subgroup {criterion}={value} has {n_short} short / {n_long} long cases; "
                              "each class needs at least 3")
        reports = run_on_cases(sub, config, MODELS, out_dir / "subgroups" / f"{criterion}_{value}" if write
                               else None, subgroup=f"{criterion}={value}")
        row = {"criterion": criterion, "subgroup": value, "n_samples": len(sub),
               "n_short": n_short, "n_long": n_long}
        for m in MODELS:
            mean = reports[m].mean
            row[f"{m}_auc"], row[f"{m}_acc"] = mean["test_auc"], mean["test_acc"]
        rows.append(row)
    if write:
        path = out_dir / "table_subgroups.csv"
        keep = [r for r in read_subgroup_table(path) if r["criterion"] != criterion] if path.is_file() else []
        merged = sorted(keep + rows, key=lambda r: (list(SUBGROUPS).index(r["criterion"]),
                                                    SUBGROUPS[r["criterion"]].index(r["subgroup"])))
        atomic_write(path, _subgroup_csv(merged))
        config.write_resolved(out_dir)
    return rows


def _subgroup_csv(rows) -> str:
    lines = [SUBGROUP_HEADER]
    for r in rows:
        metrics = ",".join(_num(float(r[f"{m}_{k}"])) for m in MODELS for k in ("auc", "acc"))
        lines.append(f"{r['criterion']},{r['subgroup']},{r['n_samples']},{r['n_short']},{r['n_long']},{metrics}")
    return "\n".join(lines) + "\n"


def read_subgroup_table(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(io.StringIO(fh.read())))
    for r in rows:
        for k in ("n_samples", "n_short", "n_long"):
            r[k] = int(r[k])
        for m in MODELS:
            for k in ("auc", "acc"):
                r[f"{m}_{k}"] = float(r[f"{m}_{k}"])
    return rows
