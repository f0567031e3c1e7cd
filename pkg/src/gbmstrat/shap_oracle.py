"""Exponential-time Shapley oracle used to check the fast tree algorithm.

Value functions:

* ``interventional`` (default): a coalition ``S`` takes the record's values
  for features in ``S`` and each background record's values elsewhere; the
  value is the mean margin over the background.
* ``path-dependent``: the expected margin when features in ``S`` are fixed to
  the record and the others are integrated out by each tree's cover
  statistics.

Features never tested by any split cannot change any coalition value, so
enumeration runs over the features the model actually uses; the rest get
exactly zero.
"""
from __future__ import annotations

from itertools import combinations
from math import factorial

import numpy as np

from .clinical.gbdt import GbdtModel, Node, _as_matrix, mask_missing
from .errors import ArgumentError


def _used_features(model: GbdtModel) -> list[int]:
    used = set()
    for tree in model.trees:
        for node in tree.nodes():
            if not node.is_leaf:
                used.add(node.feature)
    return sorted(used)


def _cond_expectation(node: Node, x: np.ndarray, known: frozenset) -> float:
    if node.is_leaf:
        return node.weight
    if node.feature in known:
        return _cond_expectation(node.child_for(x[node.feature]), x, known)
    if node.cover <= 0:
        return 0.0
    return (node.left.cover * _cond_expectation(node.left, x, known)
            + node.right.cover * _cond_expectation(node.right, x, known)) / node.cover


def coalition_values(model: GbdtModel, record, background=None, mode: str = "interventional"):
    """Map every subset (as a frozenset of feature indices) of the used features to its value."""
    x = mask_missing(_as_matrix(record), model.feature_kinds)
    if x.shape != (1, model.n_features):
        raise ArgumentError("record does not match the model schema")
    x = x[0]
    players = _used_features(model)
    if mode == "interventional":
        if background is None:
            raise ArgumentError("interventional oracle needs a background set")
        B = mask_missing(_as_matrix(background), model.feature_kinds)
        if B.ndim != 2 or B.shape[0] == 0 or B.shape[1] != model.n_features:
            raise ArgumentError("background does not match the model schema")
    elif mode != "path-dependent":
        raise ArgumentError(f"unknown mode {mode!r}")
    values = {}
    for r in range(len(players) + 1):
        for subset in combinations(players, r):
            S = frozenset(subset)
            if mode == "interventional":
                hybrid = B.copy()
                cols = list(subset)
                hybrid[:, cols] = x[cols]
                values[S] = float(model.margin(hybrid).mean())
            else:
                values[S] = model.base_margin + sum(_cond_expectation(t, x, S) for t in model.trees)
    return players, values


def brute_force_shapley(model: GbdtModel, record, background=None, mode: str = "interventional"):
    """Exact Shapley values by enumerating all coalitions; returns ``(phi, v(empty))``."""
    players, v = coalition_values(model, record, background, mode)
    M = len(players)
    phi = np.zeros(model.n_features)
    for i in players:
        others = [p for p in players if p != i]
        total = 0.0
        for r in range(M):
            w = factorial(r) * factorial(M - r - 1) / factorial(M)
            for subset in combinations(others, r):
                S = frozenset(subset)
                total += w * (v[S | {i}] - v[S])
        phi[i] = total
    return phi, v[frozenset()]


def brute_force_interactions(model: GbdtModel, record, background=None, mode: str = "path-dependent"):
    """Shapley interaction index matrix; diagonal holds phi_i minus its row of pair effects."""
    players, v = coalition_values(model, record, background, mode)
    M = len(players)
    F = model.n_features
    out = np.zeros((F, F))
    for i, j in combinations(players, 2):
        others = [p for p in players if p not in (i, j)]
        total = 0.0
        for r in range(M - 1):
            w = factorial(r) * factorial(M - r - 2) / (2.0 * factorial(M - 1))
            for subset in combinations(others, r):
                S = frozenset(subset)
                total += w * (v[S | {i, j}] - v[S | {i}] - v[S | {j}] + v[S])
        out[i, j] = out[j, i] = total
    phi, _ = brute_force_shapley(model, record, background, mode)
    out[np.diag_indices(F)] = phi - out.sum(axis=1)
    return out
