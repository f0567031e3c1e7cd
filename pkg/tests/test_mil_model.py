import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gbmstrat.errors import ArgumentError
from gbmstrat.mil.model import (
    MilHyper,
    forward,
    init_model,
    loss,
    loss_and_grads,
    select_instances,
    smooth_svm,
)

HID, ATT = 12, 6


def gradcheck_case(d=16, n=6, start_seed=0):
    """First seed whose pre-activations stay clear of the ReLU kink."""
    for seed in range(start_seed, start_seed + 200):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, d))
        model = init_model(d, seed, HID, ATT, dtype=np.float64)
        z1 = x @ model.params["fc1_w"] + model.params["fc1_b"]
        att = forward(model, x).attention
        gaps = np.diff(np.sort(att))
        if np.min(np.abs(z1)) >= 1e-3 and np.min(gaps) > 1e-6:
            return model, x
    raise AssertionError("no clean seed found")


def numeric_grads(model, x, label, hyper, eps=1e-6):
    out = {}
    for name, p in model.params.items():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + eps
            up = loss(forward(model, x), label, model, hyper)["total"]
            p[idx] = old - eps
            down = loss(forward(model, x), label, model, hyper)["total"]
            p[idx] = old
            g[idx] = (up - down) / (2 * eps)
        out[name] = g
    return out


def max_rel_error(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-7)
    return float(np.max(np.abs(a - b) / denom))


@pytest.mark.parametrize("label", [0, 1])
def test_gradients_match_central_differences(label):
    model, x = gradcheck_case()
    hyper = MilHyper(top_k=2)
    _, _, grads = loss_and_grads(model, x, label, hyper)
    num = numeric_grads(model, x, label, hyper)
    for name in model.params:
        assert max_rel_error(grads[name], num[name]) < 1e-4, name


# independent float64 reference, written from the definitions in original row order
def _ref_loss(params, x, label, hyper):
    p = {k: v.astype(np.float64) for k, v in params.items()}
    h = np.maximum(x @ p["fc1_w"] + p["fc1_b"], 0)
    gate = np.tanh(h @ p["attn_v_w"] + p["attn_v_b"]) / (1 + np.exp(-(h @ p["attn_u_w"] + p["attn_u_b"])))
    s = gate @ p["attn_w_w"] + p["attn_w_b"][0]
    a = np.exp(s - s.max())
    a /= a.sum()
    logits = (a @ h) @ p["cls_w"] + p["cls_b"]
    ce = -logits[label] + np.log(np.sum(np.exp(logits)))
    n = len(a)
    k = min(hyper.top_k, n // 2)
    ranked = sorted(range(n), key=lambda i: -a[i])
    rows = [(i, 1) for i in ranked[:k]] + [(i, 0) for i in ranked[n - k:]]
    terms = []
    for i, t in rows:
        z = h[i] @ p[f"inst{label}_w"] + p[f"inst{label}_b"]
        aug = z + hyper.svm_margin * (np.arange(2) != t)
        terms.append(hyper.svm_temperature * np.log(np.sum(np.exp(aug / hyper.svm_temperature))) - z[t])
    inst = float(np.mean(terms))
    return hyper.bag_loss_weight * ce + hyper.instance_loss_weight * inst, logits, a


@pytest.mark.parametrize("seed,label", [(1, 0), (2, 1), (3, 1)])
def test_loss_matches_reference(seed, label):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((9, 5))
    model = init_model(5, seed, 10, 4, dtype=np.float64)
    hyper = MilHyper(top_k=3)
    out = forward(model, x)
    total, logits, att = _ref_loss(model.params, x, label, hyper)
    assert loss(out, label, model, hyper)["total"] == pytest.approx(total, abs=1e-10)
    np.testing.assert_allclose(out.logits, logits, atol=1e-10)
    np.testing.assert_allclose(out.attention, att, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 30), st.integers(0, 10_000))
def test_attention_sums_to_one_and_permutation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 8)).astype(np.float32)
    model = init_model(8, seed % 7, 16, 8)
    out = forward(model, x)
    assert abs(float(out.attention.sum()) - 1.0) <= 1e-6
    perm = rng.permutation(n)
    again = forward(model, x[perm])
    assert again.logits.tobytes() == out.logits.tobytes()
    np.testing.assert_array_equal(again.attention, out.attention[perm])


def test_single_instance_bag():
    model = init_model(4, 0, 8, 4)
    out = forward(model, np.ones((1, 4), np.float32))
    assert out.attention.tolist() == [1.0]
    pos, neg = select_instances(out.cache["att"], 8)
    assert len(pos) == 1 and len(neg) == 0
    _, rec, _ = loss_and_grads(model, np.ones((1, 4), np.float32), 1, MilHyper())
    assert np.isfinite(rec["total"])


def test_top_k_clamped():
    pos, neg = select_instances(np.array([0.1, 0.5, 0.15, 0.25]), 8)
    assert pos.tolist() == [1, 3] and neg.tolist() == [2, 0]


def test_smooth_svm_small_cases():
    x = np.array([[0.0, 0.0]])
    val, grad = smooth_svm(x, np.array([1]), 1.0, 1.0)
    assert val == pytest.approx(np.log(np.e + 1.0))
    np.testing.assert_allclose(grad, [[np.e / (np.e + 1), 1 / (np.e + 1) - 1]])


def test_validation():
    with pytest.raises(ArgumentError):
        MilHyper(bag_loss_weight=0.5, instance_loss_weight=0.3)
    with pytest.raises(ArgumentError):
        forward(init_model(4, 0, 8, 4), np.zeros((2, 5)))
    with pytest.raises(ArgumentError):
        forward(init_model(4, 0, 8, 4), np.zeros((0, 4)))
    with pytest.raises(ArgumentError):
        loss_and_grads(init_model(4, 0, 8, 4), np.zeros((2, 4)), 2, MilHyper())


def test_init_is_seeded():
    a, b = init_model(6, 3, 8, 4), init_model(6, 3, 8, 4)
    assert a == b and a != init_model(6, 4, 8, 4)
    assert np.all(a.params["fc1_b"] == 0)
    assert np.max(np.abs(a.params["fc1_w"])) <= np.sqrt(6 / 6)
