"""Cohort manifest loading and per-case labelling."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from ..clinical.encoding import FEATURE_NAMES, ClinicalRecord, encode_clinical, read_clinical_csv
from ..errors import ArgumentError, ConfigError, FormatError, NotFound
from .labels import Label, label_rule, months_from_days

SEXES = ("male", "female")
MGMT_VALUES = ("methylated", "unmethylated", "unknown")


@dataclass
class CohortCase:
    case_id: str
    os_months: float | None
    vital_status: str
    sex: str
    mgmt: str
    bag_path: Path | None
    clinical: ClinicalRecord | None
    label: Label
    label_reason: str

    @property
    def labelled(self) -> bool:
        return self.label is not Label.EXCLUDED

    @property
    def label_code(self) -> int:
        return self.label.code


def _parse_months(row: dict, line: str) -> float | None:
    raw_m = (row.get("os_months") or "").strip()
    raw_d = (row.get("os_days") or "").strip()
    try:
        if raw_m and raw_m.lower() not in ("na", "nan"):
            return float(raw_m)
        if raw_d and raw_d.lower() not in ("na", "nan"):
            return months_from_days(float(raw_d))
    except ValueError as exc:
        raise FormatError(f"{line}: unreadable survival time") from exc
    return None


def _norm(value, allowed, name, line, default=None):
    v = (value or "").strip().lower()
    if not v and default is not None:
        return default
    if v not in allowed:
        raise FormatError(f"{line}: {name} must be one of {allowed}, got {value!r}")
    return v


def load_cohort(manifest, clinical_csv=None, bags_dir=None) -> list[CohortCase]:
    """Read the manifest; clinical values come from its own columns when all
    15 are present, otherwise from ``clinical_csv`` keyed by case_id."""
    manifest = Path(manifest)
    if not manifest.is_file():
        raise NotFound(f"cohort manifest not found: {manifest}")
    base = Path(bags_dir) if bags_dir is not None else manifest.parent
    external = read_clinical_csv(clinical_csv) if clinical_csv is not None else {}
    cases, seen = [], set()
    with open(manifest, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        need = {"case_id", "vital_status", "sex", "mgmt"}
        if not need <= set(header) or not ({"os_months", "os_days"} & set(header)):
            raise FormatError(f"{manifest}: header needs {sorted(need)} and os_months or os_days")
        inline = all(n in header for n in FEATURE_NAMES)
        for lineno, row in enumerate(reader, start=2):
            where = f"{manifest}:{lineno}"
            cid = row["case_id"].strip()
            if cid in seen:
                raise FormatError(f"{where}: duplicate case_id {cid}")
            seen.add(cid)
            months = _parse_months(row, where)
            try:
                label, reason = label_rule(months, row["vital_status"])
            except ArgumentError as exc:
                raise FormatError(f"{where}: {exc}") from exc
            if inline:
                try:
                    clinical = encode_clinical(row)
                except FormatError as exc:
                    raise FormatError(f"{where}: {exc}") from exc
            else:
                clinical = external.get(cid)
            bag = (row.get("bag_path") or "").strip()
            cases.append(CohortCase(
                case_id=cid,
                os_months=months,
                vital_status=row["vital_status"].strip().lower(),
                sex=_norm(row["sex"], SEXES, "sex", where),
                mgmt=_norm(row["mgmt"], MGMT_VALUES, "mgmt", where, default="unknown"),
                bag_path=(base / bag) if bag else None,
                clinical=clinical,
                label=label,
                label_reason=reason,
            ))
    return cases


def labelled(cases) -> list[CohortCase]:
    return [c for c in cases if c.labelled]


def labelling_report(cases) -> str:
    lines = ["case_id,os_months,vital_status,label,rule"]
    for c in cases:
        m = "" if c.os_months is None or math.isnan(c.os_months) else repr(c.os_months)
        lines.append(f"{c.case_id},{m},{c.vital_status},{c.label.value},{c.label_reason}")
    return "\n".join(lines) + "\n"


def check_resolvable(cases, need_bags: bool, need_clinical: bool) -> None:
    """ConfigError listing every labelled case missing a bag file or clinical record."""
    problems = []
    if need_bags:
        missing = [c.case_id for c in cases if c.bag_path is None or not c.bag_path.is_file()]
        if missing:
            problems.append(f"missing bags for {missing}")
    if need_clinical:
        missing = [c.case_id for c in cases if c.clinical is None]
        if missing:
            problems.append(f"missing clinical records for {missing}")
    if problems:
        raise ConfigError("; ".join(problems))
