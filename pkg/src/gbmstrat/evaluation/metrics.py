"""Rank-statistic AUC, thresholded accuracy and equal-weight late fusion."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from ..errors import ArgumentError


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly, ties count 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape:
        raise ArgumentError("scores and labels must align")
    n_pos = int(np.count_nonzero(y == 1))
    n_neg = int(np.count_nonzero(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ArgumentError("AUC needs both classes")
    ranks = rankdata(s, method="average")
    # twice the U statistic is an exact integer, so the ratio is the exact pair fraction
    twice_u = int(round(2 * ranks[y == 1].sum())) - n_pos * (n_pos + 1)
    return twice_u / (2 * n_pos * n_neg)


def accuracy(probabilities, labels, threshold: float = 0.5) -> float:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if p.size == 0:
        raise ArgumentError("accuracy of an empty set")
    if p.shape != y.shape:
        raise ArgumentError("probabilities and labels must align")
    return float(np.mean((p >= threshold).astype(int) == y))


def fuse(p_imaging, p_clinical):
    """Decision-level fusion by averaging the two class-long probabilities."""
    a = np.asarray(p_imaging, dtype=np.float64)
    b = np.asarray(p_clinical, dtype=np.float64)
    if np.any((a < 0) | (a > 1)) or np.any((b < 0) | (b > 1)) or np.any(np.isnan(a) | np.isnan(b)):
        raise ArgumentError("probabilities must lie in [0, 1]")
    out = (a + b) / 2.0
    return float(out) if out.ndim == 0 else out
