"""Monte Carlo stratified train/validation/test splits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError

VAL_FRACTION = 0.1
TEST_FRACTION = 0.1


@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: tuple
    val: tuple
    test: tuple

    def partition_of(self, case_id) -> str:
        for name in ("train", "val", "test"):
            if case_id in getattr(self, name):
                return name
        raise KeyError(case_id)


def _allocate(total: int, counts: list[int], order: list[int]) -> list[int]:
    """Split ``total`` across classes proportionally: floors first, then the
    largest remainders, ties resolved by ``order``."""
    n = sum(counts)
    quotas = [total * c / n for c in counts]
    out = [int(np.floor(q)) for q in quotas]
    left = total - sum(out)
    rank = sorted(range(len(counts)), key=lambda k: (-(quotas[k] - out[k]), order.index(k)))
    for k in rank[:left]:
        out[k] += 1
    return out


def monte_carlo_splits(cohort, n_folds: int = 10, seed: int = 0) -> list[FoldSplit]:
    """Independent stratified 80/10/10 splits, one generator per fold (seed + fold).

    ``cohort`` is a sequence of ``(case_id, class_code)`` pairs or objects with
    ``case_id`` and ``label_code`` attributes. Validation and test each take
    floor(N/10) cases, shared across classes in proportion to class size.
    """
    pairs = [(c.case_id, c.label_code) if hasattr(c, "label_code") else (c[0], int(c[1])) for c in cohort]
    ids = [p[0] for p in pairs]
    if len(set(ids)) != len(ids):
        raise ArgumentError("duplicate case ids in cohort")
    if n_folds < 1:
        raise ArgumentError("n_folds must be >= 1")
    classes = sorted({p[1] for p in pairs})
    by_class = {k: [cid for cid, y in pairs if y == k] for k in classes}
    if len(classes) < 2:
        raise ArgumentError("both classes must be present")
    small = {k: len(v) for k, v in by_class.items() if len(v) < 3}
    if small:
        raise ArgumentError(f"classes with fewer than 3 cases: {small}")
    if len(pairs) < 10:
        raise ArgumentError(f"need at least 10 labelled cases, got {len(pairs)}")
    n = len(pairs)
    n_test, n_val = int(np.floor(TEST_FRACTION * n)), int(np.floor(VAL_FRACTION * n))
    counts = [len(by_class[k]) for k in classes]
    out = []
    for fold in range(n_folds):
        rng = np.random.Generator(np.random.PCG64(seed + fold))
        order = [int(k) for k in rng.permutation(len(classes))]
        test_k = _allocate(n_test, counts, order)
        val_k = _allocate(n_val, counts, order)
        train, val, test = [], [], []
        for k, cls in enumerate(classes):
            members = by_class[cls]
            perm = [members[i] for i in rng.permutation(len(members))]
            test += perm[: test_k[k]]
            val += perm[test_k[k] : test_k[k] + val_k[k]]
            train += perm[test_k[k] + val_k[k] :]
        out.append(FoldSplit(fold, tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test))))
    return out
