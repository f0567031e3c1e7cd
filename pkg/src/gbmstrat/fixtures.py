"""Synthetic cohort, bags, clinical table and demo slide for smoke runs.

The labelled cohort mirrors the reference subgroup counts: 94 short and 94
long survivors; 112 male (53 short / 59 long) and 76 female (41 / 35);
MGMT methylated 59 (35 / 24), unmethylated 50 (27 / 23), the rest unknown.
A few excluded cases (middle survival band, short follow-up alive) are
added so the labelling rules are exercised.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write
from .clinical.encoding import FEATURE_NAMES
from .features import PatchBag, write_bag
from .slide_io import build_pyramid
from .tissue_seg import PATCH_SIZE, PatchCoord

FEATURE_DIM = 32
# (label, sex, mgmt) -> count
COHORT_COUNTS = {
    ("short", "male", "methylated"): 20, ("short", "male", "unmethylated"): 15, ("short", "male", "unknown"): 18,
    ("short", "female", "methylated"): 15, ("short", "female", "unmethylated"): 12, ("short", "female", "unknown"): 14,
    ("long", "male", "methylated"): 15, ("long", "male", "unmethylated"): 13, ("long", "male", "unknown"): 31,
    ("long", "female", "methylated"): 9, ("long", "female", "unmethylated"): 10, ("long", "female", "unknown"): 16,
}
N_EXCLUDED = 8

# categorical columns drawn from the label vocabulary; "" is missing
_CATEGORY_POOLS = {
    "histology": ["Glioblastoma", "Astrocytoma", "Oligoastrocytoma", "Oligodendroglioma"],
    "grade": ["G4", "G3", "G2"],
    "chr7_gain_chr10_loss": ["Gain chr 7 & loss chr 10", "No combined CNA", ""],
    "tert_status": ["Mutant", "WT", ""],
    "braf_v600e": ["WT", ""],
    "transcriptome_subtype": ["CL", "ME", "NE", "PN", ""],
    "pan_glioma_rna_cluster": ["LGr4", "unclassified", ""],
    "pan_glioma_meth_cluster": ["LGm4", "LGm5", ""],
    "supervised_meth_cluster": ["Classic-like", "Mesenchymal-like", ""],
    "rf_sturm_cluster": ["Mesenchymal", "RTK II 'Classic'", ""],
}

MANIFEST_COLUMNS = ["case_id", "os_months", "os_days", "vital_status", "sex", "mgmt", "bag_path"] + list(FEATURE_NAMES)


@dataclass
class SeparableCohort:
    bags: list[np.ndarray]
    labels: np.ndarray
    signal_rows: list[np.ndarray]  # indices of signal instances (empty for negatives)


def separable_cohort(n_bags: int = 200, dim: int = FEATURE_DIM, n_signal: int = 3, shift: float = 2.0,
                     rows=(12, 24), seed: int = 0) -> SeparableCohort:
    """Half positive bags holding ``n_signal`` rows from a +shift-sigma Gaussian; the rest pure noise."""
    rng = np.random.Generator(np.random.PCG64(seed))
    labels = np.array([i % 2 for i in range(n_bags)])
    labels = labels[rng.permutation(n_bags)]
    bags, signal = [], []
    for y in labels:
        n = int(rng.integers(rows[0], rows[1] + 1))
        x = rng.standard_normal((n, dim))
        idx = np.sort(rng.choice(n, n_signal, replace=False)) if y == 1 else np.array([], dtype=int)
        x[idx] += shift
        bags.append(x.astype(np.float32))
        signal.append(idx)
    return SeparableCohort(bags, labels, signal)


def _grid_coords(n: int) -> list[PatchCoord]:
    side = int(np.ceil(np.sqrt(n)))
    return [PatchCoord((k % side) * PATCH_SIZE, (k // side) * PATCH_SIZE) for k in range(n)]


def _survival(rng, label: str, k: int):
    """(os_months, os_days, vital_status); some cases carry days instead of months."""
    if label == "short":
        months, status = round(float(rng.uniform(1.0, 8.8)), 2), "deceased"
    elif label == "long":
        months = round(float(rng.uniform(13.2, 60.0)), 2)
        status = "alive" if k % 9 == 0 else "deceased"
    elif k % 2 == 0:
        months, status = round(float(rng.uniform(9.3, 12.7)), 2), "deceased"
    else:
        months, status = round(float(rng.uniform(2.0, 12.0)), 2), "alive"
    if k % 5 == 0:
        return "", str(int(round(months * 30.44))), status
    return repr(months), "", status


def _clinical_row(rng, label: str, sex: str, mgmt: str, perfect: bool) -> dict:
    row = {"sex": sex.capitalize(), "mgmt_status": "" if mgmt == "unknown" else mgmt.capitalize()}
    for name, pool in _CATEGORY_POOLS.items():
        row[name] = pool[int(rng.integers(len(pool)))]
    if perfect:
        age = rng.uniform(66.0, 85.0) if label == "short" else rng.uniform(25.0, 45.0)
    else:
        age = rng.normal(61.0 if label == "short" else 52.0, 11.0)
    row["age_years"] = str(int(np.clip(round(age), 18, 90)))
    row["mutation_count"] = "" if rng.random() < 0.2 else str(int(rng.poisson(45 if label == "short" else 60)))
    row["percent_aneuploidy"] = "" if rng.random() < 0.1 else f"{rng.uniform(0.05, 0.6):.3f}"
    return row


def _bag_features(rng, label: str, imaging_signal: float) -> np.ndarray:
    n = int(rng.integers(12, 25))
    x = rng.standard_normal((n, FEATURE_DIM))
    if label == "long" and imaging_signal > 0:
        x[rng.choice(n, 3, replace=False)] += imaging_signal
    return x.astype(np.float32)


def demo_slide(out_dir, slide_id: str = "demo-slide", seed: int = 0):
    """2048 px square slide at 20x: a stained disc on white with a magenta pen
    blot and a pale air bubble, each covering whole grid cells."""
    rng = np.random.Generator(np.random.PCG64(seed))
    size = 2048
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.full((size, size, 3), 244, dtype=np.uint8)
    disc = (xx - 1024) ** 2 + (yy - 1000) ** 2 <= 820 ** 2
    tissue = np.array([205, 120, 170], dtype=np.int16) + rng.integers(-6, 7, size=(size, size, 1), dtype=np.int16)
    img[disc] = np.clip(tissue[disc], 0, 255).astype(np.uint8)
    img[512:768, 768:1280] = (200, 10, 120)
    img[1024:1280, 1280:1536] = (235, 228, 232)
    return build_pyramid(img, [1, 4, 16], slide_id, out_dir, objective_power=20, mpp=0.5)


def demo_checkpoint(path, seed: int = 0) -> None:
    """Untrained 1024-input network so heatmaps can be rendered for baseline bags."""
    from .mil.checkpoint import write_checkpoint
    from .mil.model import MilHyper, init_model

    hyper = MilHyper(hidden=128, attn_hidden=64, seed=seed)
    write_checkpoint(init_model(1024, seed, hyper.hidden, hyper.attn_hidden), path, hyper)


CONFIG_TEMPLATE = """\
# Synthetic-cohort configuration. Paths are relative to this file.
[paths]
manifest = "cohort.csv"
bags_dir = "bags"
out_dir = "out"

[experiment]
seed = {seed}
n_folds = 10
threads = 1

[mil]
# narrower than the default 512/256 network so the smoke run stays fast
hidden = 128
attn_hidden = 64
epochs = 8
early_stop_patience = 4
learning_rate = 0.001

[gbdt]
eta = 0.1
gamma = 0.5
max_depth = 6
subsample = 0.6
min_child_weight = 2.0
lambda = 1.0
n_rounds = 60
early_stop_patience = 10
"""


def make_fixtures(out_dir, seed: int = 0, variant: str = "default", with_slide: bool = True) -> Path:
    """Write cohort.csv, bags/, config.toml (and a demo slide bundle) under ``out_dir``.

    ``variant="perfect-clinical"`` gives pure-noise bags and an age column
    that separates the classes exactly.
    """
    if variant not in ("default", "perfect-clinical"):
        raise ValueError(f"unknown fixture variant {variant!r}")
    perfect = variant == "perfect-clinical"
    out = Path(out_dir)
    rng = np.random.Generator(np.random.PCG64(seed))
    entries = []
    for (label, sex, mgmt), count in COHORT_COUNTS.items():
        entries += [(label, sex, mgmt)] * count
    for k in range(N_EXCLUDED):
        entries.append(("excluded", "male" if k % 2 else "female", "unknown"))
    order = rng.permutation(len(entries))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for k, idx in enumerate(order):
        label, sex, mgmt = entries[idx]
        cid = f"CASE-{k:04d}"
        os_months, os_days, status = _survival(rng, label, k)
        bag_name = f"{cid}.pbag"
        feats = _bag_features(rng, label, 0.0 if perfect else 0.3)
        write_bag(PatchBag(cid, feats, _grid_coords(feats.shape[0]), "synthetic"), out / "bags" / bag_name)
        row = {"case_id": cid, "os_months": os_months, "os_days": os_days, "vital_status": status,
               "sex": sex, "mgmt": mgmt, "bag_path": bag_name}
        row.update(_clinical_row(rng, label, sex, mgmt, perfect))
        writer.writerow(row)
    atomic_write(out / "cohort.csv", buf.getvalue())
    atomic_write(out / "config.toml", CONFIG_TEMPLATE.format(seed=seed))
    if with_slide:
        demo_slide(out / "slides" / "demo-slide", seed=seed)
        demo_checkpoint(out / "slides" / "demo-mil.milc", seed=seed)
    return out
