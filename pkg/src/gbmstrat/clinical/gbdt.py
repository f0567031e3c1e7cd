"""Second-order gradient-boosted trees for binary logistic classification.

Exact greedy split search over every midpoint of sorted distinct values
(numeric features) or every one-vs-rest category (categorical features).
Missing values are tried on both sides and the better side becomes the
node's default direction.

Tie-breaking, applied identically everywhere: a candidate replaces the
incumbent only if its gain is larger by more than ``GAIN_TIE_TOL`` (relative).
Candidates are visited by feature index, then threshold or category code,
then default-left before default-right, so ties resolve to the earliest.
A split is accepted only if its gain (after subtracting gamma) exceeds
``GAIN_EPS``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .._io import atomic_write
from ..errors import ArgumentError, FormatError
from .encoding import FEATURE_KINDS, FEATURE_NAMES

GAIN_TIE_TOL = 1e-10
GAIN_EPS = 1e-12


@dataclass
class GbdtHyper:
    eta: float = 0.1
    gamma: float = 0.5
    max_depth: int = 6
    subsample: float = 0.6
    min_child_weight: float = 2.0
    reg_lambda: float = 1.0
    n_rounds: int = 100
    early_stop_patience: int = 10
    base_score: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ArgumentError("eta must lie in (0, 1]")
        if not 0 < self.subsample <= 1:
            raise ArgumentError("subsample must lie in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise ArgumentError("lambda and gamma must be non-negative")
        if self.max_depth < 0 or self.n_rounds < 0:
            raise ArgumentError("max_depth and n_rounds must be non-negative")
        if not 0 < self.base_score < 1:
            raise ArgumentError("base_score must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("reg_lambda")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtHyper":
        d = dict(d)
        if "lambda" in d:
            d["reg_lambda"] = d.pop("lambda")
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class SplitInfo:
    feature: int
    kind: str
    value: float  # threshold (numeric, x < value goes left) or category code (x == value goes left)
    default_left: bool
    gain: float  # after subtracting gamma
    raw_gain: float
    g_left: float
    h_left: float
    g_right: float
    h_right: float


def split_gain(gl, hl, gr, hr, lam):
    """Loss reduction before the gamma penalty."""
    g, h = gl + gr, hl + hr
    return 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - g * g / (h + lam))


def _better(gain, best):
    return best is None or gain > best.gain + GAIN_TIE_TOL * max(1.0, abs(best.gain))


def _consider(best, feature, kind, value, gl, hl, gr, hr, gm, hm, has_missing, hyper):
    options = ((True, False) if has_missing else (True,))
    for default_left in options:
        a_g, a_h = (gl + gm, hl + hm) if default_left else (gl, hl)
        b_g, b_h = (gr, hr) if default_left else (gr + gm, hr + hm)
        if a_h < hyper.min_child_weight or b_h < hyper.min_child_weight:
            continue
        raw = split_gain(a_g, a_h, b_g, b_h, hyper.reg_lambda)
        gain = raw - hyper.gamma
        if _better(gain, best):
            best = SplitInfo(feature, kind, value, default_left, gain, raw, a_g, a_h, b_g, b_h)
    return best


def best_split(g, h, column, hyper: GbdtHyper, kind: str = "num", feature: int = 0,
               incumbent: SplitInfo | None = None) -> SplitInfo | None:
    """Best split of one feature column (NaN = missing), or None if no gain exceeds zero.

    ``incumbent`` lets callers chain features while keeping the tie-break rule.
    """
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    col = np.asarray(column, dtype=np.float64)
    valid = ~np.isnan(col)
    has_missing = not valid.all()
    gm, hm = float(g[~valid].sum()), float(h[~valid].sum())
    xv, gv, hv = col[valid], g[valid], h[valid]
    gtot, htot = float(gv.sum()), float(hv.sum())
    best = incumbent
    if kind == "num":
        order = np.argsort(xv, kind="stable")
        xs = xv[order]
        cg = np.cumsum(gv[order])
        ch = np.cumsum(hv[order])
        for i in np.flatnonzero(xs[:-1] < xs[1:]):
            thr = (xs[i] + xs[i + 1]) / 2.0
            if thr <= xs[i]:
                thr = xs[i + 1]
            gl, hl = float(cg[i]), float(ch[i])
            best = _consider(best, feature, kind, float(thr), gl, hl, gtot - gl, htot - hl,
                             gm, hm, has_missing, hyper)
    elif kind == "cat":
        for code in np.unique(xv):
            m = xv == code
            gl, hl = float(gv[m].sum()), float(hv[m].sum())
            best = _consider(best, feature, kind, float(code), gl, hl, gtot - gl, htot - hl,
                             gm, hm, has_missing, hyper)
    else:
        raise ArgumentError(f"unknown feature kind {kind!r}")
    if best is incumbent:
        return None
    return best if best.gain > GAIN_EPS else None


def find_best_split(X, g, h, kinds, hyper: GbdtHyper) -> SplitInfo | None:
    best = None
    for j, kind in enumerate(kinds):
        cand = best_split(g, h, X[:, j], hyper, kind, j, incumbent=best)
        if cand is not None:
            best = cand
    return best


def go_left(values, kind, value, default_left) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    missing = np.isnan(values)
    with np.errstate(invalid="ignore"):
        test = values < value if kind == "num" else values == value
    return np.where(missing, default_left, test)


@dataclass
class Node:
    sum_grad: float
    sum_hess: float
    depth: int = 0
    feature: int | None = None
    kind: str | None = None
    value: float | None = None
    default_left: bool = True
    gain: float | None = None
    raw_gain: float | None = None
    left: Node | None = None
    right: Node | None = None
    weight: float = 0.0  # leaf output, already scaled by eta
    raw_weight: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def cover(self) -> float:
        return self.sum_hess

    def child_for(self, x: float) -> "Node":
        return self.left if bool(go_left([x], self.kind, self.value, self.default_left)[0]) else self.right

    def nodes(self):
        yield self
        if not self.is_leaf:
            yield from self.left.nodes()
            yield from self.right.nodes()

    def max_depth(self) -> int:
        return self.depth if self.is_leaf else max(self.left.max_depth(), self.right.max_depth())

    def to_dict(self, names=None) -> dict:
        d = {"depth": self.depth, "sum_grad": self.sum_grad, "sum_hess": self.sum_hess}
        if self.is_leaf:
            d.update(leaf=self.weight, raw_weight=self.raw_weight)
            return d
        d.update(split_index=self.feature, kind=self.kind, default_left=self.default_left,
                 gain=self.gain, raw_gain=self.raw_gain,
                 children=[self.left.to_dict(names), self.right.to_dict(names)])
        if names is not None:
            d["split"] = names[self.feature]
        d["threshold" if self.kind == "num" else "category"] = (
            self.value if self.kind == "num" else int(self.value))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        node = cls(float(d["sum_grad"]), float(d["sum_hess"]), int(d["depth"]))
        if "leaf" in d:
            node.weight, node.raw_weight = float(d["leaf"]), float(d.get("raw_weight", 0.0))
            return node
        node.feature = int(d["split_index"])
        node.kind = d["kind"]
        node.value = float(d["threshold"] if node.kind == "num" else d["category"])
        node.default_left = bool(d["default_left"])
        node.gain, node.raw_gain = float(d["gain"]), float(d["raw_gain"])
        node.left, node.right = cls.from_dict(d["children"][0]), cls.from_dict(d["children"][1])
        return node


def grow_tree(X, g, h, kinds, hyper: GbdtHyper, rows=None, depth: int = 0) -> Node:
    """Depth-first greedy growth on ``rows``; leaves store ``eta * -G/(H+lambda)``."""
    rows = np.arange(X.shape[0]) if rows is None else rows
    G, H = float(g[rows].sum()), float(h[rows].sum())
    node = Node(G, H, depth)
    if depth < hyper.max_depth and rows.size >= 2:
        split = find_best_split(X[rows], g[rows], h[rows], kinds, hyper)
        if split is not None:
            left = go_left(X[rows, split.feature], split.kind, split.value, split.default_left)
            node.feature, node.kind, node.value = split.feature, split.kind, split.value
            node.default_left, node.gain, node.raw_gain = split.default_left, split.gain, split.raw_gain
            node.left = grow_tree(X, g, h, kinds, hyper, rows[left], depth + 1)
            node.right = grow_tree(X, g, h, kinds, hyper, rows[~left], depth + 1)
            return node
    node.raw_weight = -G / (H + hyper.reg_lambda)
    node.weight = hyper.eta * node.raw_weight
    return node


def predict_tree(node: Node, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = np.zeros(X.shape[0])
    stack = [(node, np.arange(X.shape[0]))]
    while stack:
        nd, idx = stack.pop()
        if idx.size == 0:
            continue
        if nd.is_leaf:
            out[idx] = nd.weight
            continue
        left = go_left(X[idx, nd.feature], nd.kind, nd.value, nd.default_left)
        stack.append((nd.left, idx[left]))
        stack.append((nd.right, idx[~left]))
    return out


def _logit(p):
    return math.log(p / (1.0 - p))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def logistic_loss(margin, y) -> float:
    margin = np.asarray(margin, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, margin) - np.asarray(y) * margin))


@dataclass
class GbdtModel:
    trees: list[Node]
    base_score: float = 0.5
    hyper: GbdtHyper = field(default_factory=GbdtHyper)
    feature_names: tuple = FEATURE_NAMES
    feature_kinds: tuple = FEATURE_KINDS
    best_iteration: int | None = None

    @property
    def base_margin(self) -> float:
        return _logit(self.base_score)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def margin(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise ArgumentError(f"expected {self.n_features} features, got {X.shape[1]}")
        X = mask_missing(X, self.feature_kinds)
        out = np.full(X.shape[0], self.base_margin)
        for t in self.trees:
            out += predict_tree(t, X)
        return out

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.margin(X))

    def to_dict(self) -> dict:
        return {
            "format": "gbmstrat-gbdt", "version": 1, "booster": "gbtree", "objective": "binary:logistic",
            "hyper": self.hyper.to_dict(), "base_score": self.base_score,
            "feature_names": list(self.feature_names), "feature_kinds": list(self.feature_kinds),
            "best_iteration": self.best_iteration,
            "trees": [t.to_dict(self.feature_names) for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path) -> None:
        atomic_write(path, self.to_json())

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        if d.get("format") != "gbmstrat-gbdt":
            raise FormatError("not a gbdt model dump")
        return cls([Node.from_dict(t) for t in d["trees"]], float(d["base_score"]),
                   GbdtHyper.from_dict(d["hyper"]), tuple(d["feature_names"]), tuple(d["feature_kinds"]),
                   d.get("best_iteration"))

    @classmethod
    def load(cls, path) -> "GbdtModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def dump_text(self) -> str:
        """Indented text rendering of every tree."""
        lines = []
        for k, tree in enumerate(self.trees):
            lines.append(f"booster[{k}]:")
            counter = iter(range(10**9))
            _dump_node(tree, self.feature_names, lines, counter)
        return "\n".join(lines) + "\n"


def _dump_node(node, names, lines, counter):
    nid = next(counter)
    pad = "\t" * node.depth
    if node.is_leaf:
        lines.append(f"{pad}{nid}:leaf={node.weight:.6g},cover={node.cover:.6g}")
        return nid
    test = f"{names[node.feature]}<{node.value:.6g}" if node.kind == "num" else \
        f"{names[node.feature]}=={int(node.value)}"
    at = len(lines)
    lines.append("")
    left_id = _dump_node(node.left, names, lines, counter)
    right_id = _dump_node(node.right, names, lines, counter)
    missing = left_id if node.default_left else right_id
    lines[at] = (f"{pad}{nid}:[{test}] yes={left_id},no={right_id},missing={missing},"
                 f"gain={node.raw_gain:.6g},cover={node.cover:.6g}")
    return nid


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, (list, tuple)) and X and hasattr(X[0], "to_vector"):
        return np.vstack([r.to_vector() for r in X])
    if hasattr(X, "to_vector"):
        return X.to_vector()[None, :]
    X = np.asarray(X, dtype=np.float64)
    return X[None, :] if X.ndim == 1 else X


def mask_missing(X, kinds) -> np.ndarray:
    """Copy of ``X`` with categorical -1 codes replaced by NaN."""
    X = np.array(X, dtype=np.float64)
    for j, kind in enumerate(kinds):
        if kind == "cat":
            X[X[:, j] == -1, j] = np.nan
    return X


def train_gbdt(records, labels, hyper: GbdtHyper | None = None, eval_set=None,
               feature_names=FEATURE_NAMES, feature_kinds=FEATURE_KINDS):
    """Fit the ensemble; ``eval_set`` is ``(records, labels)`` for AUC early stopping.

    Returns ``(model, history)``; history rows hold train_loss and eval_auc per round.
    """
    from ..evaluation.metrics import auc

    hyper = hyper or GbdtHyper()
    X = _as_matrix(records)
    y = np.asarray(labels, dtype=np.float64)
    if X.shape[0] < 2 or X.shape[0] != y.shape[0]:
        raise ArgumentError("need at least two aligned records")
    if len(np.unique(y)) < 2:
        raise ArgumentError("training labels contain a single class")
    kinds = tuple(feature_kinds)
    if X.shape[1] != len(kinds):
        raise ArgumentError(f"{X.shape[1]} columns but {len(kinds)} feature kinds")
    X = mask_missing(X, kinds)

    model = GbdtModel([], hyper.base_score, hyper, tuple(feature_names), kinds)
    margin = np.full(X.shape[0], model.base_margin)
    Xe = ye = e_margin = None
    if eval_set is not None:
        Xe = mask_missing(_as_matrix(eval_set[0]), kinds)
        ye = np.asarray(eval_set[1])
        e_margin = np.full(Xe.shape[0], model.base_margin)
        if len(np.unique(ye)) < 2:
            Xe = None
    rng = np.random.Generator(np.random.PCG64(hyper.seed))
    history = []
    best_auc, best_round, stale = -np.inf, None, 0
    for rnd in range(hyper.n_rounds):
        p = _sigmoid(margin)
        g = p - y
        h = p * (1.0 - p)
        if hyper.subsample < 1.0:
            rows = np.flatnonzero(rng.random(X.shape[0]) < hyper.subsample)
        else:
            rows = np.arange(X.shape[0])
        if rows.size == 0:
            tree = Node(0.0, 0.0, 0)
        else:
            tree = grow_tree(X, g, h, kinds, hyper, rows)
        model.trees.append(tree)
        margin += predict_tree(tree, X)
        row = {"round": rnd, "train_loss": logistic_loss(margin, y)}
        if Xe is not None:
            e_margin += predict_tree(tree, Xe)
            row["eval_auc"] = auc(e_margin, ye)
            if row["eval_auc"] > best_auc:
                best_auc, best_round, stale = row["eval_auc"], rnd, 0
            else:
                stale += 1
        history.append(row)
        if Xe is not None and stale >= hyper.early_stop_patience:
            break
    if best_round is not None:
        model.trees = model.trees[: best_round + 1]
        model.best_iteration = best_round
    return model, history


def predict_gbdt(model: GbdtModel, record) -> float | np.ndarray:
    """Probability of the long-survivor class for one record (float) or many (array)."""
    single = hasattr(record, "to_vector") or np.ndim(record) == 1
    out = model.predict_proba(_as_matrix(record))
    return float(out[0]) if single else out


def feature_gain_importance(model: GbdtModel) -> list[tuple[str, float]]:
    """Pre-penalty split gain summed per feature, highest first (ties by feature index)."""
    totals = {}
    for tree in model.trees:
        for node in tree.nodes():
            if not node.is_leaf:
                totals[node.feature] = totals.get(node.feature, 0.0) + node.raw_gain
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(model.feature_names[j], total) for j, total in ranked]
