"""Labels, splits, metrics, fusion and the cross-validation experiment driver."""
from .labels import Label, assign_label, label_rule, months_from_days
from .metrics import accuracy, auc, fuse
from .splits import FoldSplit, monte_carlo_splits

__all__ = ["Label", "assign_label", "label_rule", "months_from_days", "accuracy", "auc", "fuse",
           "FoldSplit", "monte_carlo_splits"]
