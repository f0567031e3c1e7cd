"""Exact Shapley attributions for boosted-tree margins.

Each root-to-leaf path defines a small game over the distinct features it
tests. For the path-dependent convention a leaf with value ``w`` contributes
``w * prod_f (o_f if f in S else z_f)``, where ``o_f`` says whether the record
follows the path at every node testing ``f`` and ``z_f`` is the product of
the cover fractions along those nodes. The Shapley value of such a product
game has a closed form in the elementary symmetric sums of the other
players, so a tree costs O(leaves * depth^3) per record batch.

The interventional convention replaces cover fractions with a concrete
background record; a leaf is then reached iff a fixed feature set is taken
from the record and another fixed set from the background, which is again
closed-form.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .clinical.gbdt import GbdtModel, Node, go_left, mask_missing, _as_matrix
from .errors import ArgumentError

PATH_DEPENDENT = "path-dependent"
INTERVENTIONAL = "interventional"


@dataclass
class ShapResult:
    phi: np.ndarray
    base_value: float
    margin: float
    mode: str = PATH_DEPENDENT
    interactions: np.ndarray | None = None

    @property
    def probability(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.margin)))


@dataclass
class _Leaf:
    value: float
    # one entry per node on the path: (feature, kind, split value, default_left, went_left, cover fraction)
    steps: list


def _leaves(tree: Node) -> list[_Leaf]:
    out = []

    def walk(node, steps):
        if node.is_leaf:
            out.append(_Leaf(node.weight, steps))
            return
        for child, went_left in ((node.left, True), (node.right, False)):
            frac = child.cover / node.cover if node.cover > 0 else 0.0
            walk(child, steps + [(node.feature, node.kind, node.value, node.default_left, went_left, frac)])

    walk(tree, [])
    return out


def _grouped(leaf: _Leaf, X: np.ndarray):
    """Per distinct feature on the path: (feature, follows-array, cover product)."""
    groups: dict[int, list] = {}
    for feature, kind, value, default_left, went_left, frac in leaf.steps:
        follows = go_left(X[:, feature], kind, value, default_left) == went_left
        if feature in groups:
            groups[feature][0] &= follows
            groups[feature][1] *= frac
        else:
            groups[feature] = [follows.copy(), frac]
    return [(f, o.astype(np.float64), z) for f, (o, z) in groups.items()]


def _shapley_weights(d: int) -> np.ndarray:
    return np.array([factorial(s) * factorial(d - 1 - s) / factorial(d) for s in range(d)])


def _poly_excluding(players, skip) -> list[np.ndarray]:
    """Coefficients of prod_{f not in skip} (z_f + o_f t), each an array over records."""
    n = players[0][1].shape[0] if players else 1
    coefs = [np.ones(n)]
    for k, (_, o, z) in enumerate(players):
        if k in skip:
            continue
        nxt = [c * z for c in coefs] + [np.zeros(n)]
        for s, c in enumerate(coefs):
            nxt[s + 1] = nxt[s + 1] + c * o
        coefs = nxt
    return coefs


def _prepare(model: GbdtModel, X) -> np.ndarray:
    X = _as_matrix(X)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ArgumentError(f"records have {X.shape[-1]} features, model expects {model.n_features}")
    return mask_missing(X, model.feature_kinds)


def _tree_leaves(model: GbdtModel):
    cache = getattr(model, "_shap_leaves", None)
    if cache is None or len(cache) != len(model.trees):
        cache = [_leaves(t) for t in model.trees]
        model._shap_leaves = cache
    return cache


def expected_margin(model: GbdtModel) -> float:
    """Cover-weighted expectation of the margin (the path-dependent baseline)."""
    total = model.base_margin
    for leaves in _tree_leaves(model):
        for leaf in leaves:
            total += leaf.value * float(np.prod([s[5] for s in leaf.steps]))
    return total


def path_dependent_phi(model: GbdtModel, X) -> np.ndarray:
    X = _prepare(model, X)
    phi = np.zeros(X.shape)
    for leaves in _tree_leaves(model):
        for leaf in leaves:
            players = _grouped(leaf, X)
            d = len(players)
            if d == 0 or leaf.value == 0.0:
                continue
            w = _shapley_weights(d)
            for i, (f, o, z) in enumerate(players):
                coefs = _poly_excluding(players, {i})
                acc = sum(w[s] * coefs[s] for s in range(d))
                phi[:, f] += leaf.value * (o - z) * acc
    return phi


def path_dependent_interactions(model: GbdtModel, X, pairs=None) -> np.ndarray:
    """Off-diagonal Shapley interaction values, shape (n, F, F); diagonal left at zero.

    ``pairs`` restricts the work to the given (i, j) feature pairs.
    """
    X = _prepare(model, X)
    n, F = X.shape
    out = np.zeros((n, F, F))
    wanted = None if pairs is None else {frozenset(p) for p in pairs}
    for leaves in _tree_leaves(model):
        for leaf in leaves:
            players = _grouped(leaf, X)
            d = len(players)
            if d < 2 or leaf.value == 0.0:
                continue
            w = _shapley_weights(d - 1)
            for a in range(d):
                for b in range(a + 1, d):
                    fa, oa, za = players[a]
                    fb, ob, zb = players[b]
                    if wanted is not None and frozenset((fa, fb)) not in wanted:
                        continue
                    coefs = _poly_excluding(players, {a, b})
                    acc = sum(w[s] * coefs[s] for s in range(d - 1))
                    val = 0.5 * leaf.value * (oa - za) * (ob - zb) * acc
                    out[:, fa, fb] += val
                    out[:, fb, fa] += val
    return out


def interventional_phi(model: GbdtModel, X, background) -> tuple[np.ndarray, float]:
    X = _prepare(model, X)
    B = _prepare(model, background)
    if B.shape[0] == 0:
        raise ArgumentError("background set is empty")
    phi = np.zeros(X.shape)
    fact = np.array([float(factorial(k)) for k in range(64)])
    for leaves in _tree_leaves(model):
        for leaf in leaves:
            if leaf.value == 0.0 or not leaf.steps:
                continue
            features = []
            for feature, kind, value, default_left, went_left, _ in leaf.steps:
                if feature not in features:
                    features.append(feature)
            fx, fb = {}, {}
            for feature, kind, value, default_left, went_left, _ in leaf.steps:
                ox = go_left(X[:, feature], kind, value, default_left) == went_left
                ob = go_left(B[:, feature], kind, value, default_left) == went_left
                fx[feature] = fx[feature] & ox if feature in fx else ox
                fb[feature] = fb[feature] & ob if feature in fb else ob
            # per (record, background) pair: A = record-only features, Bset = background-only
            ox = np.stack([fx[f] for f in features], axis=1)[:, None, :]  # n x 1 x d
            ob = np.stack([fb[f] for f in features], axis=1)[None, :, :]  # 1 x m x d
            reach = np.all(ox | ob, axis=2)
            in_a = ox & ~ob
            in_b = ob & ~ox
            na = in_a.sum(axis=2)
            nb = in_b.sum(axis=2)
            # pairs with na = 0 and nb = 0 contribute only to the constant
            denom = fact[na + nb]
            wa = np.where(na > 0, fact[np.maximum(na - 1, 0)] * fact[nb] / denom, 0.0)
            wb = np.where(nb > 0, fact[na] * fact[np.maximum(nb - 1, 0)] / denom, 0.0)
            wa = np.where(reach, wa, 0.0)
            wb = np.where(reach, wb, 0.0)
            for k, f in enumerate(features):
                contrib = in_a[:, :, k] * wa - in_b[:, :, k] * wb
                phi[:, f] += leaf.value * contrib.mean(axis=1)
    base = float(model.margin(B).mean())
    return phi, base


def shap_values(model: GbdtModel, record, background=None, mode: str = PATH_DEPENDENT,
                interactions: bool = False) -> ShapResult:
    """Attributions in margin (log-odds) space for one record.

    ``base_value + phi.sum() == margin`` holds in both modes. The
    path-dependent baseline is the cover-weighted expected margin, the
    interventional one the mean margin over ``background``.
    """
    X = _prepare(model, record)
    if X.shape[0] != 1:
        raise ArgumentError("shap_values explains one record; use shap_matrix for many")
    margin = float(model.margin(X)[0])
    if mode == PATH_DEPENDENT:
        if background is not None and _as_matrix(background).shape[-1] != model.n_features:
            raise ArgumentError("background schema does not match the model")
        phi = path_dependent_phi(model, X)[0]
        base = expected_margin(model)
    elif mode == INTERVENTIONAL:
        if background is None:
            raise ArgumentError("interventional mode needs a background set")
        phi, base = interventional_phi(model, X, background)
        phi = phi[0]
    else:
        raise ArgumentError(f"unknown mode {mode!r}")
    inter = shap_interaction_values(model, X) if interactions else None
    return ShapResult(phi, base, margin, mode, inter)


def shap_matrix(model: GbdtModel, records, background=None, mode: str = PATH_DEPENDENT):
    """Batch version: returns ``(phi (n, F), base_value, margins (n,))``."""
    X = _prepare(model, records)
    margins = model.margin(X)
    if mode == PATH_DEPENDENT:
        return path_dependent_phi(model, X), expected_margin(model), margins
    phi, base = interventional_phi(model, X, background)
    return phi, base, margins


def shap_interaction_values(model: GbdtModel, record) -> np.ndarray:
    """F x F matrix: symmetric, off-diagonal pairwise effects, rows summing to phi."""
    X = _prepare(model, record)
    if X.shape[0] != 1:
        raise ArgumentError("shap_interaction_values explains one record")
    off = path_dependent_interactions(model, X)[0]
    phi = path_dependent_phi(model, X)[0]
    out = off.copy()
    out[np.diag_indices_from(out)] = phi - off.sum(axis=1)
    return out


def missing_flag(raw_value: float, kind: str) -> str:
    """``missing_numeric`` for NaN continuous, ``missing_categorical`` for code -1."""
    if kind == "num" and np.isnan(raw_value):
        return "missing_numeric"
    if kind == "cat" and (np.isnan(raw_value) or raw_value == -1):
        return "missing_categorical"
    return "present"


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def shap_csv(model: GbdtModel, records, case_ids=None, mode: str = PATH_DEPENDENT, background=None) -> str:
    """Long-format summary data: one row per (case, feature)."""
    X = _as_matrix(records)
    ids = list(case_ids) if case_ids is not None else [str(i) for i in range(X.shape[0])]
    phi, base, margins = shap_matrix(model, X, background, mode)
    lines = ["case_id,feature,value,phi,missing_flag,base_value,margin,probability"]
    for r, cid in enumerate(ids):
        prob = 1.0 / (1.0 + np.exp(-margins[r]))
        for j, name in enumerate(model.feature_names):
            lines.append(",".join([str(cid), name, _fmt(X[r, j]), repr(float(phi[r, j])),
                                   missing_flag(X[r, j], model.feature_kinds[j]), repr(base),
                                   repr(float(margins[r])), repr(float(prob))]))
    return "\n".join(lines) + "\n"


def interactions_csv(model: GbdtModel, records, pair=("age_years", "sex"), case_ids=None) -> str:
    """Pairwise interaction values for one named feature pair, one row per case."""
    names = list(model.feature_names)
    try:
        i, j = names.index(pair[0]), names.index(pair[1])
    except ValueError as exc:
        raise ArgumentError(f"unknown feature in pair {pair}") from exc
    if i == j:
        raise ArgumentError("interaction pair needs two distinct features")
    X = _as_matrix(records)
    ids = list(case_ids) if case_ids is not None else [str(k) for k in range(X.shape[0])]
    inter = path_dependent_interactions(model, X, pairs=[(i, j)])
    lines = [f"case_id,{pair[0]},{pair[1]},interaction"]
    for r, cid in enumerate(ids):
        lines.append(f"{cid},{_fmt(X[r, i])},{_fmt(X[r, j])},{float(inter[r, i, j])!r}")
    return "\n".join(lines) + "\n"
