import numpy as np
import pytest

from gbmstrat.clinical.encoding import FEATURE_KINDS, FEATURE_NAMES
from gbmstrat.clinical.gbdt import GbdtHyper, GbdtModel, Node, train_gbdt
from gbmstrat.errors import ArgumentError
from gbmstrat.shap_oracle import brute_force_interactions, brute_force_shapley
from gbmstrat.treeshap import (
    INTERVENTIONAL,
    PATH_DEPENDENT,
    interactions_csv,
    missing_flag,
    shap_csv,
    shap_interaction_values,
    shap_matrix,
    shap_values,
)


def leaf(w, cover):
    return Node(0.0, cover, weight=w)


def split(f, v, left, right, kind="num", default_left=True):
    return Node(0.0, left.sum_hess + right.sum_hess, feature=f, kind=kind, value=v, default_left=default_left,
                gain=1.0, raw_gain=1.0, left=left, right=right)


def small_model(trees, names=("a", "b", "c"), kinds=("num", "num", "cat")):
    return GbdtModel(list(trees), 0.5, GbdtHyper(), tuple(names), tuple(kinds))


def and_model(w=2.0):
    # w only when a >= 0.5 and b >= 0.5
    return small_model([split(0, 0.5, leaf(0.0, 2), split(1, 0.5, leaf(0.0, 1), leaf(w, 1)))])


def random_model(seed):
    rng = np.random.default_rng(seed)
    f = int(rng.integers(2, 7))
    kinds = tuple(rng.choice(["num", "cat"], f))
    n = 60
    X = np.empty((n, f))
    for j, k in enumerate(kinds):
        X[:, j] = rng.integers(0, 3, n) if k == "cat" else rng.normal(size=n)
        X[rng.random(n) < 0.15, j] = np.nan if k == "num" else -1
    logit = np.nan_to_num(X[:, 0]) - 0.7 * np.nan_to_num(X[:, 1]) * (np.nan_to_num(X[:, -1]) > 0)
    y = (logit + rng.normal(0, 0.5, n) > 0).astype(int)
    y[:2] = [0, 1]
    hyper = GbdtHyper(max_depth=int(rng.integers(1, 4)), n_rounds=int(rng.integers(1, 6)), gamma=0.0,
                      min_child_weight=0.5, subsample=float(rng.choice([1.0, 0.6])), eta=0.3, seed=seed)
    model, _ = train_gbdt(X, y, hyper, feature_names=tuple(f"f{j}" for j in range(f)), feature_kinds=kinds)
    return model, X


def test_hand_computed_and_game():
    m = and_model(2.0)
    x = np.array([1.0, 1.0, 0.0])
    r = shap_values(m, x, interactions=True)
    # cover game: v({})=w/4, v(a)=v(b)=w/2, v(ab)=w
    np.testing.assert_allclose(r.phi, [0.75, 0.75, 0.0], atol=1e-12)
    assert r.base_value == pytest.approx(0.5)
    assert r.interactions[0, 1] == pytest.approx(0.25) and r.interactions[1, 0] == pytest.approx(0.25)
    np.testing.assert_allclose(np.diag(r.interactions), [0.5, 0.5, 0.0], atol=1e-12)
    # one background point at the origin: v = 0 unless both features come from the record
    phi, base = brute_force_shapley(m, x, np.zeros((1, 3)))
    ri = shap_values(m, x, np.zeros((1, 3)), mode=INTERVENTIONAL)
    np.testing.assert_allclose(ri.phi, [1.0, 1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(phi, ri.phi, atol=1e-12)
    assert ri.base_value == pytest.approx(0.0) and base == pytest.approx(0.0)


def test_zero_tree_model():
    m = small_model([])
    r = shap_values(m, np.zeros(3), interactions=True)
    assert np.all(r.phi == 0) and r.base_value == 0.0 and np.all(r.interactions == 0)


def test_single_stump():
    m = small_model([split(2, 1.0, leaf(0.4, 3), leaf(-0.2, 1), kind="cat")])
    for x in ([0.0, 0.0, 1.0], [5.0, 5.0, 2.0]):
        for mode, bg in ((PATH_DEPENDENT, None), (INTERVENTIONAL, np.array([[0, 0, 0], [1, 1, 1.0]]))):
            r = shap_values(m, np.array(x), bg, mode=mode)
            assert r.phi[2] == pytest.approx(r.margin - r.base_value, abs=1e-12)
            assert r.phi[0] == 0 and r.phi[1] == 0


def test_additive_stumps_have_no_interactions():
    m = small_model([split(0, 0.0, leaf(0.3, 2), leaf(-0.1, 3)), split(1, 1.0, leaf(-0.5, 1), leaf(0.2, 4))])
    for x in ([-1.0, 0.0, 0], [2.0, 2.0, 1], [np.nan, 2.0, -1]):
        inter = shap_interaction_values(m, np.array(x))
        off = inter - np.diag(np.diag(inter))
        assert np.max(np.abs(off)) < 1e-6
        np.testing.assert_allclose(np.diag(inter), shap_values(m, np.array(x)).phi, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_matches_brute_force(seed):
    model, X = random_model(seed)
    bg = X[:12]
    for x in X[::15]:
        r = shap_values(model, x, interactions=True)
        phi_o, base_o = brute_force_shapley(model, x, mode=PATH_DEPENDENT)
        np.testing.assert_allclose(r.phi, phi_o, atol=1e-6)
        assert r.base_value == pytest.approx(base_o, abs=1e-6)
        np.testing.assert_allclose(r.interactions, brute_force_interactions(model, x), atol=1e-6)
        np.testing.assert_allclose(r.interactions, r.interactions.T, atol=1e-12)
        np.testing.assert_allclose(r.interactions.sum(axis=1), r.phi, atol=1e-6)
        ri = shap_values(model, x, bg, mode=INTERVENTIONAL)
        phi_i, base_i = brute_force_shapley(model, x, bg)
        np.testing.assert_allclose(ri.phi, phi_i, atol=1e-6)
        assert ri.base_value == pytest.approx(base_i, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_local_accuracy_batch(seed):
    model, X = random_model(seed)
    for mode in (PATH_DEPENDENT, INTERVENTIONAL):
        phi, base, margins = shap_matrix(model, X, X[:10], mode)
        np.testing.assert_allclose(phi.sum(axis=1) + base, margins, atol=1e-6)
        np.testing.assert_allclose(margins, model.margin(X), atol=0)


def test_errors():
    m = and_model()
    with pytest.raises(ArgumentError):
        shap_values(m, np.zeros(4))
    with pytest.raises(ArgumentError):
        shap_values(m, np.zeros(3), mode=INTERVENTIONAL)
    with pytest.raises(ArgumentError):
        shap_values(m, np.zeros(3), mode="exact")


def test_missing_flags():
    assert missing_flag(np.nan, "num") == "missing_numeric"
    assert missing_flag(-1.0, "cat") == "missing_categorical"
    assert missing_flag(-1.0, "num") == "present"
    assert missing_flag(2.0, "cat") == "present"


def test_csv_outputs():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 15))
    X[:, :12] = rng.integers(0, 2, (30, 12))
    X[0, 3], X[1, 13] = -1, np.nan
    y = (X[:, 12] > 0).astype(int)
    model, _ = train_gbdt(X, y, GbdtHyper(n_rounds=5, min_child_weight=0.1))
    text = shap_csv(model, X[:2], ["A", "B"])
    lines = text.splitlines()
    assert lines[0] == "case_id,feature,value,phi,missing_flag,base_value,margin,probability"
    assert len(lines) == 1 + 2 * 15
    assert lines[1 + 3].split(",")[4] == "missing_categorical"
    assert lines[1 + 15 + 13].split(",")[4] == "missing_numeric"
    rows = [ln.split(",") for ln in lines[1:16]]
    assert sum(float(r[3]) for r in rows) + float(rows[0][5]) == pytest.approx(float(rows[0][6]), abs=1e-9)
    inter = interactions_csv(model, X[:3], case_ids=["A", "B", "C"]).splitlines()
    assert inter[0] == "case_id,age_years,sex,interaction" and len(inter) == 4
    full = shap_interaction_values(model, X[2])
    i, j = FEATURE_NAMES.index("age_years"), FEATURE_NAMES.index("sex")
    assert float(inter[3].split(",")[3]) == pytest.approx(full[i, j], abs=1e-12)
    assert FEATURE_KINDS[j] == "cat"


def test_constant_model_is_all_zero():
    m = small_model([leaf(0.7, 5)])
    r = shap_values(m, np.array([1.0, 2.0, 0.0]))
    assert np.all(r.phi == 0) and r.base_value == pytest.approx(0.7)
    phi, _ = brute_force_shapley(m, np.array([1.0, 2.0, 0.0]), np.zeros((2, 3)))
    assert np.all(phi == 0)


def test_symmetric_features_share_credit():
    # a and b enter through mirror-image trees
    t1 = split(0, 0.5, leaf(0.0, 2), split(1, 0.5, leaf(0.1, 1), leaf(0.9, 1)))
    t2 = split(1, 0.5, leaf(0.0, 2), split(0, 0.5, leaf(0.1, 1), leaf(0.9, 1)))
    m = small_model([t1, t2])
    for x in ([1.0, 1.0, 0.0], [0.0, 0.0, 1.0]):
        for mode, bg in (("path-dependent", None), (INTERVENTIONAL, np.array([[0.0, 0.0, 0], [1.0, 1.0, 1]]))):
            phi = shap_values(m, np.array(x), bg, mode=mode).phi
            assert abs(phi[0] - phi[1]) < 1e-9
