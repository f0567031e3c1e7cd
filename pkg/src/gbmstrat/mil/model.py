"""Gated-attention MIL network with an instance-level clustering branch.

Forward pass for a bag ``X`` (N x D)::

    H = relu(X W1 + b1)                          N x 512
    s = (tanh(H Va + ba) * sigmoid(H Ua + bu)) w + bw
    a = softmax(s)                               attention over instances
    M = a @ H                                    slide embedding
    logits = M Wc + bc                           [short, long]

The instance branch feeds the top-k and bottom-k attended embeddings to the
head of the bag's class and scores them with a smooth multiclass SVM loss.
Gradients are derived by hand in :func:`loss_and_grads` (reverse mode).

Rows are processed in lexicographic order of their feature values, so every
reduction has a fixed order and logits are bitwise identical under any
permutation of the bag.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ArgumentError

SHORT, LONG = 0, 1


@dataclass
class MilHyper:
    bag_loss_weight: float = 0.7
    instance_loss_weight: float = 0.3
    top_k: int = 8
    learning_rate: float = 2e-4
    weight_decay: float = 1e-5
    epochs: int = 20
    early_stop_patience: int = 20
    seed: int = 0
    hidden: int = 512
    attn_hidden: int = 256
    svm_margin: float = 1.0
    svm_temperature: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self):
        if abs(self.bag_loss_weight + self.instance_loss_weight - 1.0) > 1e-12:
            raise ArgumentError("bag_loss_weight + instance_loss_weight must equal 1")
        if self.top_k < 1:
            raise ArgumentError("top_k must be >= 1")
        if not self.learning_rate > 0:
            raise ArgumentError("learning_rate must be positive")
        if self.epochs < 0 or self.early_stop_patience < 1:
            raise ArgumentError("epochs must be >= 0 and patience >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(d: int, hidden: int = 512, attn_hidden: int = 256) -> dict[str, tuple]:
    return {
        "fc1_w": (d, hidden), "fc1_b": (hidden,),
        "attn_v_w": (hidden, attn_hidden), "attn_v_b": (attn_hidden,),
        "attn_u_w": (hidden, attn_hidden), "attn_u_b": (attn_hidden,),
        "attn_w_w": (attn_hidden,), "attn_w_b": (1,),
        "cls_w": (hidden, 2), "cls_b": (2,),
        "inst0_w": (hidden, 2), "inst0_b": (2,),
        "inst1_w": (hidden, 2), "inst1_b": (2,),
    }


class AttentionModel:
    """Named parameter tensors stored as views into one contiguous buffer."""

    def __init__(self, params: dict[str, np.ndarray], dims, seed: int = 0):
        names = list(params)
        dtype = np.result_type(*[params[n].dtype for n in names])
        sizes = [params[n].size for n in names]
        self.flat = np.empty(sum(sizes), dtype=dtype)
        self.params = {}
        off = 0
        for n, size in zip(names, sizes):
            view = self.flat[off : off + size].reshape(params[n].shape)
            view[...] = params[n]
            self.params[n] = view
            off += size
        self.dims = tuple(int(d) for d in dims)
        self.seed = int(seed)

    @property
    def dtype(self):
        return self.flat.dtype

    def flatten(self, tensors: dict[str, np.ndarray]) -> np.ndarray:
        """Concatenate per-parameter arrays (e.g. gradients) in storage order."""
        return np.concatenate([np.ravel(tensors[n]) for n in self.params]).astype(self.dtype, copy=False)

    def copy(self) -> "AttentionModel":
        return AttentionModel(self.params, self.dims, self.seed)

    def astype(self, dtype) -> "AttentionModel":
        return AttentionModel({k: v.astype(dtype) for k, v in self.params.items()}, self.dims, self.seed)

    def __eq__(self, other):
        if not isinstance(other, AttentionModel):
            return NotImplemented
        return (self.dims == other.dims and list(self.params) == list(other.params)
                and all(self.params[k].shape == other.params[k].shape for k in self.params)
                and self.flat.dtype == other.flat.dtype and self.flat.tobytes() == other.flat.tobytes())

    def __repr__(self):
        return f"AttentionModel(dims={self.dims}, seed={self.seed}, dtype={self.dtype})"


def init_model(d: int, seed: int = 0, hidden: int = 512, attn_hidden: int = 256,
               dtype=np.float32) -> AttentionModel:
    """Uniform fan-in init from a PCG64 generator: sqrt(6/fan_in) before the
    rectifier, sqrt(3/fan_in) elsewhere; biases start at zero."""
    if d < 1:
        raise ArgumentError("feature dimension must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    params = {}
    for name, shape in param_shapes(d, hidden, attn_hidden).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = shape[0]
        bound = np.sqrt((6.0 if name == "fc1_w" else 3.0) / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return AttentionModel(params, (d, hidden, attn_hidden), seed)


@dataclass
class BagOutput:
    logits: np.ndarray
    probability_long: float
    attention: np.ndarray  # original row order
    embeddings: np.ndarray  # original row order
    cache: dict = field(default_factory=dict, repr=False)


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def canonical_order(x: np.ndarray) -> np.ndarray:
    return np.lexsort(x.T[::-1])


def forward(model: AttentionModel, features) -> BagOutput:
    x = np.asarray(getattr(features, "features", features))
    if x.ndim != 2 or x.shape[1] != model.dims[0]:
        raise ArgumentError(f"bag dim {x.shape[-1] if x.ndim else '?'} != model dim {model.dims[0]}")
    if x.shape[0] < 1:
        raise ArgumentError("bag has no instances")
    p = model.params
    order = canonical_order(x)
    xs = x[order].astype(model.dtype)
    z1 = xs @ p["fc1_w"] + p["fc1_b"]
    h = np.maximum(z1, 0)
    ta = np.tanh(h @ p["attn_v_w"] + p["attn_v_b"])
    sb = _sigmoid(h @ p["attn_u_w"] + p["attn_u_b"])
    gated = ta * sb
    scores = gated @ p["attn_w_w"] + p["attn_w_b"][0]
    att = _softmax(scores)
    m = att @ h
    logits = m @ p["cls_w"] + p["cls_b"]
    prob = _softmax(logits)

    attention = np.empty_like(att)
    attention[order] = att
    embeddings = np.empty_like(h)
    embeddings[order] = h
    cache = dict(order=order, xs=xs, z1=z1, h=h, ta=ta, sb=sb, gated=gated, att=att, m=m, prob=prob)
    return BagOutput(logits, float(prob[LONG]), attention, embeddings, cache)


def select_instances(att_sorted: np.ndarray, top_k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices (canonical order) of the k most and k least attended rows.

    k is clamped to floor(N/2); a single-instance bag contributes one positive.
    """
    n = att_sorted.shape[0]
    desc = np.argsort(-att_sorted, kind="stable")
    if n == 1:
        return desc[:1], desc[:0]
    k = max(1, min(top_k, n // 2))
    return desc[:k], desc[n - k:]


def smooth_svm(x: np.ndarray, targets: np.ndarray, margin: float, tau: float):
    """Smooth top-1 SVM: ``tau*logsumexp((x + margin*[j != y]) / tau) - x_y`` averaged over rows."""
    n = x.shape[0]
    aug = x + margin * (1.0 - np.eye(2, dtype=x.dtype)[targets])
    z = aug / tau
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    per_row = tau * lse - x[np.arange(n), targets]
    q = _softmax(z)
    grad = (q - np.eye(2, dtype=x.dtype)[targets]) / n
    return float(per_row.mean()), grad


def _losses(out: BagOutput, label: int, model: AttentionModel, hyper: MilHyper):
    c = out.cache
    # log-softmax form keeps saturated predictions accurate
    lg = out.logits
    bag_ce = float(np.log(np.exp(lg - lg.max()).sum()) + lg.max() - lg[label])
    pos, neg = select_instances(c["att"], hyper.top_k)
    sel = np.concatenate([pos, neg])
    targets = np.concatenate([np.ones(len(pos), dtype=int), np.zeros(len(neg), dtype=int)])
    p = model.params
    hs = c["h"][sel]
    inst_logits = hs @ p[f"inst{label}_w"] + p[f"inst{label}_b"]
    inst, d_inst = smooth_svm(inst_logits, targets, hyper.svm_margin, hyper.svm_temperature)
    total = hyper.bag_loss_weight * bag_ce + hyper.instance_loss_weight * inst
    return {"total": total, "bag_ce": bag_ce, "instance_svm": inst}, (sel, hs, d_inst)


def loss(output: BagOutput, label: int, model: AttentionModel, hyper: MilHyper) -> dict:
    if label not in (SHORT, LONG):
        raise ArgumentError(f"label must be 0 or 1, got {label}")
    return _losses(output, label, model, hyper)[0]


def loss_and_grads(model: AttentionModel, features, label: int, hyper: MilHyper):
    """Forward, loss and reverse-mode gradients for every parameter."""
    if label not in (SHORT, LONG):
        raise ArgumentError(f"label must be 0 or 1, got {label}")
    out = forward(model, features)
    record, (sel, hs, d_inst) = _losses(out, label, model, hyper)
    c = out.cache
    p = model.params
    c1, c2 = hyper.bag_loss_weight, hyper.instance_loss_weight
    g = {k: np.zeros_like(v) for k, v in p.items()}

    # bag classifier
    d_logits = c1 * (c["prob"] - np.eye(2, dtype=c["prob"].dtype)[label])
    g["cls_w"] = np.outer(c["m"], d_logits)
    g["cls_b"] = d_logits
    d_m = p["cls_w"] @ d_logits
    h, att = c["h"], c["att"]
    d_h = np.outer(att, d_m)

    # attention pooling and gated scorer
    d_att = h @ d_m
    d_s = att * (d_att - att @ d_att)
    g["attn_w_w"] = c["gated"].T @ d_s
    g["attn_w_b"] = np.array([d_s.sum()], dtype=d_s.dtype)
    d_gated = np.outer(d_s, p["attn_w_w"])
    d_va = d_gated * c["sb"] * (1.0 - c["ta"] ** 2)
    d_ua = d_gated * c["ta"] * c["sb"] * (1.0 - c["sb"])
    g["attn_v_w"] = h.T @ d_va
    g["attn_v_b"] = d_va.sum(axis=0)
    g["attn_u_w"] = h.T @ d_ua
    g["attn_u_b"] = d_ua.sum(axis=0)
    d_h += d_va @ p["attn_v_w"].T + d_ua @ p["attn_u_w"].T

    # instance clustering head of the bag's class
    d_inst = c2 * d_inst
    g[f"inst{label}_w"] = hs.T @ d_inst
    g[f"inst{label}_b"] = d_inst.sum(axis=0)
    np.add.at(d_h, sel, d_inst @ p[f"inst{label}_w"].T)

    # first layer
    d_z1 = d_h * (c["z1"] > 0)
    g["fc1_w"] = c["xs"].T @ d_z1
    g["fc1_b"] = d_z1.sum(axis=0)
    g = {k: v.astype(p[k].dtype, copy=False) for k, v in g.items()}
    return out, record, g
