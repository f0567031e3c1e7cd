"""Clustering-constrained attention multiple-instance learning."""
from .model import AttentionModel, BagOutput, MilHyper, forward, init_model, loss, loss_and_grads
from .train import AdamState, predict, train, train_step, fit
from .checkpoint import read_checkpoint, write_checkpoint, write_history

__all__ = [
    "AttentionModel", "BagOutput", "MilHyper", "forward", "init_model", "loss", "loss_and_grads",
    "AdamState", "predict", "train", "train_step", "fit",
    "read_checkpoint", "write_checkpoint", "write_history",
]
