"""Binary overall-survival labels with an excluded middle band."""
from __future__ import annotations

import math
from enum import Enum

from ..errors import ArgumentError

SHORT_MAX_MONTHS = 9.0
LONG_MIN_MONTHS = 13.0
DAYS_PER_MONTH = 30.44


class Label(str, Enum):
    SHORT = "short"
    LONG = "long"
    EXCLUDED = "excluded"

    @property
    def code(self) -> int:
        if self is Label.EXCLUDED:
            raise ArgumentError("excluded cases have no class code")
        return 1 if self is Label.LONG else 0


def months_from_days(days: float) -> float:
    return float(days) / DAYS_PER_MONTH


def label_rule(os_months, vital_status: str) -> tuple[Label, str]:
    """Label plus a short tag naming the rule that produced it."""
    status = str(vital_status).strip().lower()
    if status not in ("deceased", "alive", "dead"):
        raise ArgumentError(f"vital_status must be deceased or alive, got {vital_status!r}")
    if os_months is None or (isinstance(os_months, float) and math.isnan(os_months)):
        return Label.EXCLUDED, "unknown_os"
    m = float(os_months)
    if m < 0:
        raise ArgumentError(f"os_months must be >= 0, got {m}")
    if status == "alive":
        # censored: only follow-up already past the long boundary is informative
        if m >= LONG_MIN_MONTHS:
            return Label.LONG, "alive_followup_ge_13"
        return Label.EXCLUDED, "alive_followup_lt_13"
    if m <= SHORT_MAX_MONTHS:
        return Label.SHORT, "deceased_le_9"
    if m >= LONG_MIN_MONTHS:
        return Label.LONG, "deceased_ge_13"
    return Label.EXCLUDED, "deceased_between"


def assign_label(os_months, vital_status: str) -> Label:
    return label_rule(os_months, vital_status)[0]
