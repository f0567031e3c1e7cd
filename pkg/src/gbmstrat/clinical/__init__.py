"""Clinical/molecular feature encoding and the boosted-tree classifier."""
from .encoding import CATEGORICAL, CONTINUOUS, FEATURE_NAMES, ClinicalRecord, encode_clinical, read_clinical_csv
from .gbdt import GbdtHyper, GbdtModel, best_split, feature_gain_importance, predict_gbdt, train_gbdt

__all__ = [
    "CATEGORICAL", "CONTINUOUS", "FEATURE_NAMES", "ClinicalRecord", "encode_clinical", "read_clinical_csv",
    "GbdtHyper", "GbdtModel", "best_split", "feature_gain_importance", "predict_gbdt", "train_gbdt",
]
