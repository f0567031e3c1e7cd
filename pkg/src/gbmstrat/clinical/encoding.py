"""Integer encodings of the 15 clinical/molecular features.

Categorical codes are fixed integers per label; -1 marks a missing
value. Continuous features use NaN for missing.
"""
from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from ..errors import FormatError

MISSING = -1
_MISSING_TOKENS = {"", "na", "nan", "n/a", "none", "null", "-1", "[not available]", "not available"}

# name -> {lower-cased label: code}; numeric codes are accepted as labels too
CATEGORICAL: dict[str, dict[str, int]] = {
    "sex": {"male": 1, "female": 0},
    "histology": {"astrocytoma": 0, "glioblastoma": 1, "oligoastrocytoma": 2, "oligodendroglioma": 3},
    "grade": {"g2": 0, "g3": 1, "g4": 2},
    "mgmt_status": {"methylated": 0, "unmethylated": 1},
    "chr7_gain_chr10_loss": {"gain chr 7 & loss chr 10": 0, "no combined cna": 1},
    "tert_status": {"mutant": 0, "wt": 1},
    "braf_v600e": {"wt": 0},
    "transcriptome_subtype": {"cl": 0, "me": 1, "ne": 2, "pn": 3},
    "pan_glioma_rna_cluster": {"lgr4": 0, "unclassified": 1},
    "pan_glioma_meth_cluster": {"lgm4": 0, "lgm5": 1},
    "supervised_meth_cluster": {"classic-like": 0, "mesenchymal-like": 1},
    "rf_sturm_cluster": {"mesenchymal": 0, "rtk ii 'classic'": 1},
}
NEVER_MISSING = ("sex", "histology", "grade")
CONTINUOUS = ("age_years", "mutation_count", "percent_aneuploidy")
FEATURE_NAMES = tuple(CATEGORICAL) + CONTINUOUS
FEATURE_KINDS = tuple(["cat"] * len(CATEGORICAL) + ["num"] * len(CONTINUOUS))
DISPLAY_NAMES = {
    "sex": "Sex", "histology": "Histology", "grade": "Grade", "mgmt_status": "MGMT promoter status",
    "chr7_gain_chr10_loss": "Chr 7 gain/Chr 10 loss", "tert_status": "TERT promoter status",
    "braf_v600e": "BRAF V600E status", "transcriptome_subtype": "Transcriptome Subtype",
    "pan_glioma_rna_cluster": "Pan-Glioma RNA Expression Cluster",
    "pan_glioma_meth_cluster": "Pan-Glioma DNA Methylation Cluster",
    "supervised_meth_cluster": "Supervised DNA Methylation Cluster",
    "rf_sturm_cluster": "Random Forest Sturm Cluster", "age_years": "Age (years at diagnosis)",
    "mutation_count": "Mutation Count", "percent_aneuploidy": "Percent Aneuploidy",
}


@dataclass(frozen=True)
class ClinicalRecord:
    sex: int
    histology: int
    grade: int
    mgmt_status: int
    chr7_gain_chr10_loss: int
    tert_status: int
    braf_v600e: int
    transcriptome_subtype: int
    pan_glioma_rna_cluster: int
    pan_glioma_meth_cluster: int
    supervised_meth_cluster: int
    rf_sturm_cluster: int
    age_years: float
    mutation_count: float
    percent_aneuploidy: float

    def to_vector(self) -> np.ndarray:
        """Model input row: categorical -1 becomes NaN so it is routed as missing."""
        v = np.array(astuple(self), dtype=np.float64)
        n_cat = len(CATEGORICAL)
        v[:n_cat][v[:n_cat] == MISSING] = np.nan
        return v

    def validate(self) -> None:
        for name, table in CATEGORICAL.items():
            code = getattr(self, name)
            allowed = set(table.values()) | ({MISSING} if name not in NEVER_MISSING else set())
            if code not in allowed:
                raise FormatError(f"{name}: code {code} not in {sorted(allowed)}")
        if not math.isnan(self.age_years) and self.age_years <= 0:
            raise FormatError(f"age_years must be positive, got {self.age_years}")


def _missing(raw) -> bool:
    return raw is None or str(raw).strip().lower() in _MISSING_TOKENS


def _encode_category(name: str, raw) -> int:
    if _missing(raw):
        if name in NEVER_MISSING:
            raise FormatError(f"{name}: value is required")
        return MISSING
    token = str(raw).strip().lower()
    table = CATEGORICAL[name]
    if token in table:
        return table[token]
    try:
        code = int(token)
    except ValueError:
        code = None
    if code is not None and code in table.values():
        return code
    raise FormatError(f"{name}: unrecognised value {raw!r}")


def _encode_number(name: str, raw) -> float:
    if _missing(raw) and str(raw).strip() != "-1":
        return float("nan")
    try:
        value = float(raw)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{name}: not a number: {raw!r}") from exc
    return value


def encode_clinical(row: dict) -> ClinicalRecord:
    missing_cols = [n for n in FEATURE_NAMES if n not in row]
    if missing_cols:
        raise FormatError(f"clinical row lacks columns {missing_cols}")
    values = {n: _encode_category(n, row[n]) for n in CATEGORICAL}
    values.update({n: _encode_number(n, row[n]) for n in CONTINUOUS})
    record = ClinicalRecord(**values)
    record.validate()
    return record


def read_clinical_csv(path) -> dict[str, ClinicalRecord]:
    """Map case_id to record for a CSV whose header holds ``case_id`` plus the feature names."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "case_id" not in reader.fieldnames:
            raise FormatError(f"{path}: header must include case_id")
        out = {}
        for line, row in enumerate(reader, start=2):
            try:
                out[row["case_id"]] = encode_clinical(row)
            except FormatError as exc:
                raise FormatError(f"{path}:{line}: {exc}") from exc
    return out


def records_matrix(records) -> np.ndarray:
    return np.vstack([r.to_vector() for r in records]) if records else np.empty((0, len(FEATURE_NAMES)))


def field_names() -> list[str]:
    return [f.name for f in fields(ClinicalRecord)]
