"""Adam training loop with decoupled weight decay and best-validation checkpointing."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError, TrainingError
from ..evaluation.metrics import auc
from .model import AttentionModel, MilHyper, forward, init_model, loss, loss_and_grads

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_model(cls, model: AttentionModel) -> "AdamState":
        return cls(np.zeros_like(model.flat), np.zeros_like(model.flat), 0)


def _features(bag):
    return getattr(bag, "features", bag)


def train_step(model: AttentionModel, bag, label: int, hyper: MilHyper, state: AdamState | None = None):
    """One AdamW update from a single bag. Parameters are updated in place."""
    state = state or AdamState.for_model(model)
    _, record, grads = loss_and_grads(model, _features(bag), label, hyper)
    if not np.isfinite(record["total"]) or not all(np.isfinite(g).all() for g in grads.values()):
        raise TrainingError(
            f"non-finite loss at step {state.t + 1}: total={record['total']}, "
            f"bag_ce={record['bag_ce']}, instance_svm={record['instance_svm']}"
        )
    state.t += 1
    b1, b2 = hyper.beta1, hyper.beta2
    g = model.flatten(grads)
    state.m *= b1
    state.m += (1 - b1) * g
    g *= g
    state.v *= b2
    state.v += (1 - b2) * g
    denom = np.sqrt(state.v / (1.0 - b2 ** state.t))
    denom += hyper.adam_eps
    step = state.m / denom
    step *= 1.0 / (1.0 - b1 ** state.t)
    step += hyper.weight_decay * model.flat
    step *= hyper.learning_rate
    model.flat -= step.astype(model.dtype, copy=False)
    return model, state, record


def predict(model: AttentionModel, bag) -> dict:
    out = forward(model, _features(bag))
    return {"probability_long": out.probability_long, "attention": out.attention}


def _evaluate(model, items, hyper):
    if not items:
        return float("nan"), float("nan")
    probs, labels, losses = [], [], []
    for bag, label in items:
        out = forward(model, _features(bag))
        probs.append(out.probability_long)
        labels.append(label)
        losses.append(loss(out, label, model, hyper)["bag_ce"])
    try:
        score = auc(probs, labels)
    except ArgumentError:
        score = float("nan")
    return score, float(np.mean(losses))


def fit(train_items, val_items, hyper: MilHyper, dtype=np.float32):
    """Train on ``(bag, label)`` pairs; returns the best-validation model and per-epoch history.

    Selection key is validation AUC, ties broken by lower validation
    cross-entropy, then by the earlier epoch.
    """
    if not train_items:
        raise ArgumentError("empty training split")
    if not val_items:
        raise ArgumentError("empty validation split")
    dim = _features(train_items[0][0]).shape[1]
    model = init_model(dim, hyper.seed, hyper.hidden, hyper.attn_hidden, dtype=dtype)
    history = []
    if hyper.epochs == 0:
        return model, history
    rng = np.random.Generator(np.random.PCG64(hyper.seed))
    state = AdamState.for_model(model)
    best = model.copy()
    best_key = None
    stale = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(train_items))
        total = 0.0
        for i in order:
            bag, label = train_items[i]
            _, state, record = train_step(model, bag, label, hyper, state)
            total += record["total"]
        val_auc, val_loss = _evaluate(model, val_items, hyper)
        history.append({"epoch": epoch, "train_loss": total / len(order), "val_auc": val_auc,
                        "val_loss": val_loss})
        key = (-np.inf if np.isnan(val_auc) else val_auc, -val_loss)
        if best_key is None or key > best_key:
            best_key, best, stale = key, model.copy(), 0
        else:
            stale += 1
            if stale >= hyper.early_stop_patience:
                log.debug("early stop at epoch %d", epoch)
                break
    return best, history


def train(dataset, split, hyper: MilHyper, dtype=np.float32):
    """Train on the train/val partitions of ``split``; ``dataset`` maps case id to (bag, label)."""
    missing = [cid for cid in list(split.train) + list(split.val) if cid not in dataset]
    if missing:
        raise ArgumentError(f"cases missing from dataset: {missing}")
    return fit([dataset[c] for c in split.train], [dataset[c] for c in split.val], hyper, dtype)
