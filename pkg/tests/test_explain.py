import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from incidentlab.boosting import GbdtModel, fit_forest, fit_gbdt
from incidentlab.errors import InputError
from incidentlab.explain import (
    explain,
    shap_summary,
    split_importance,
    tree_expected_value,
    tree_shap,
    tree_shap_matrix,
)
from incidentlab.tree import DecisionTree, TreeParams, fit_variance_tree

from oracles import brute_force_shap


def stump(feature=0, threshold=0.5, a=1.0, b=5.0, cover=(10, 10)):
    nodes = [
        {"id": 0, "feature": feature, "threshold": threshold, "left": 1, "right": 2, "gain": 2.0,
         "cover": float(sum(cover))},
        {"id": 1, "value": a, "cover": float(cover[0])},
        {"id": 2, "value": b, "cover": float(cover[1])},
    ]
    return DecisionTree.from_nodes(nodes)


def random_tree(seed, d=5, n=120, depth=4):
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, d)).round(1)
    y = X @ g.normal(size=d) + np.sin(3 * X[:, 0]) + 0.2 * g.normal(size=n)
    return X, fit_variance_tree(X, y, TreeParams(max_depth=depth, min_samples_leaf=3))


def test_single_leaf():
    t = DecisionTree.from_nodes([{"id": 0, "value": 7.5, "cover": 4.0}])
    phi, phi0 = tree_shap_matrix(t, np.zeros((1, 3)))
    assert not phi.any() and phi0 == 7.5


def test_depth_one_closed_form():
    a, b = 1.0, 5.0
    sv = tree_shap(stump(a=a, b=b), np.array([0.0, 9.0]))
    assert sv.phi[0] == pytest.approx((a - b) / 2, abs=1e-15)
    assert sv.phi[1] == 0 and sv.phi0 == pytest.approx((a + b) / 2)


def test_expected_value_cover_weighted():
    t = stump(a=2.0, b=8.0, cover=(3, 1))
    assert tree_expected_value(t) == pytest.approx(3.5) == pytest.approx(t.expected_value())


@pytest.mark.parametrize("seed", range(15))
def test_matches_brute_force(seed):
    X, t = random_tree(seed)
    phi, _ = tree_shap_matrix(t, X[:8])
    for i in range(8):
        assert np.allclose(phi[i], brute_force_shap(t, X[i], X.shape[1]), rtol=0, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_local_accuracy_ensembles(seed):
    X, _ = random_tree(seed)
    y = X[:, 0] ** 2 + X[:, 1]
    for model in (fit_gbdt(X, y, params=TreeParams(max_depth=3, min_samples_leaf=3), n_rounds=10, seed=seed),
                  fit_forest(X, y, TreeParams(max_depth=4, min_samples_leaf=3), n_trees=4, seed=seed)):
        phi, phi0 = tree_shap_matrix(model, X)
        assert np.max(np.abs(phi0 + phi.sum(axis=1) - model.predict_raw(X))) <= 1e-8


def test_logistic_model_explained_in_raw_space():
    g = np.random.default_rng(2)
    X = g.normal(size=(150, 3))
    y = (X[:, 0] > 0).astype(float)
    m = fit_gbdt(X, y, "logistic", TreeParams(max_depth=2, min_samples_leaf=5), n_rounds=5)
    phi, phi0 = tree_shap_matrix(m, X)
    assert np.allclose(phi0 + phi.sum(axis=1), m.predict_raw(X), atol=1e-10)


def test_dummy_feature_zero():
    X, t = random_tree(3)
    unused = sorted(set(range(X.shape[1])) - set(t.feature[t.feature >= 0].tolist()))
    X2 = np.hstack([X, np.random.default_rng(0).normal(size=(X.shape[0], 1))])
    phi, _ = tree_shap_matrix(t, X2)
    assert not phi[:, -1].any()
    for j in unused:
        assert not phi[:, j].any()


def test_additivity_across_trees():
    X, t1 = random_tree(4)
    _, t2 = random_tree(5)
    ens = GbdtModel([t1, t2], 1.0, 0.0, "squared_error", 2, X.shape[1])
    phi, phi0 = tree_shap_matrix(ens, X)
    p1, b1 = tree_shap_matrix(t1, X)
    p2, b2 = tree_shap_matrix(t2, X)
    assert np.allclose(phi, p1 + p2, rtol=0, atol=1e-12)
    assert phi0 == pytest.approx(b1 + b2)


def test_symmetry_duplicated_column():
    # tree splitting on x0 then x1 with identical thresholds, on a sample symmetric in (x0, x1)
    nodes = [
        {"id": 0, "feature": 0, "threshold": 0.5, "left": 1, "right": 2, "gain": 1.0, "cover": 4.0},
        {"id": 1, "feature": 1, "threshold": 0.5, "left": 3, "right": 4, "gain": 1.0, "cover": 2.0},
        {"id": 2, "feature": 1, "threshold": 0.5, "left": 5, "right": 6, "gain": 1.0, "cover": 2.0},
        {"id": 3, "value": 0.0, "cover": 1.0},
        {"id": 4, "value": 1.0, "cover": 1.0},
        {"id": 5, "value": 1.0, "cover": 1.0},
        {"id": 6, "value": 3.0, "cover": 1.0},
    ]
    t = DecisionTree.from_nodes(nodes)
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    s = shap_summary(t, X).mean_abs_shap
    assert abs(s[0] - s[1]) <= 1e-6


def test_constant_model_all_zero():
    X = np.random.default_rng(0).normal(size=(50, 3))
    m = fit_gbdt(X, np.full(50, 4.0), params=TreeParams(max_depth=3), n_rounds=3)
    rep = shap_summary(m, X)
    assert not rep.mean_abs_shap.any()


def test_summary_is_hand_average():
    X, t = random_tree(6)
    rows = X[:3]
    per_row = [np.abs(tree_shap(t, r).phi) for r in rows]
    expected = (per_row[0] + per_row[1] + per_row[2]) / 3
    assert np.allclose(shap_summary(t, rows).mean_abs_shap, expected, rtol=0, atol=1e-15)


def test_split_counts_bookkeeping():
    X, _ = random_tree(7)
    y = X[:, 0] - X[:, 2]
    m = fit_gbdt(X, y, params=TreeParams(max_depth=3, min_samples_leaf=3), n_rounds=6)
    rep = split_importance(m)
    assert rep.split_count.sum() == sum(int((t.feature >= 0).sum()) for t in m.trees)
    assert np.all(rep.total_gain >= 0)


def test_depth_one_tree_on_feature_three():
    rep = split_importance(stump(feature=3), n_features=6)
    assert rep.split_count.tolist() == [0, 0, 0, 1, 0, 0]


def test_empty_model_empty_report():
    m = GbdtModel([], 0.1, 0.0, "squared_error", 0, 3)
    rep = split_importance(m)
    assert not rep.split_count.any() and not rep.total_gain.any()


def test_ranking_and_csv(tmp_path):
    rep = split_importance(stump(feature=1), feature_names=["b", "a", "c"], n_features=3)
    assert rep.ranking("split_count") == [("a", 1.0), ("b", 0.0), ("c", 0.0)]
    assert rep.ranking("total_gain", top_k=1) == [("a", 2.0)]
    rep.to_csv(tmp_path / "s.csv", "split_count")
    assert (tmp_path / "s.csv").read_text().splitlines() == ["rank,feature,value", "1,a,1", "2,b,0", "3,c,0"]
    with pytest.raises(InputError):
        rep.column("mean_abs_shap")


def test_dimension_mismatch():
    X, _ = random_tree(8)
    m = fit_gbdt(X, X[:, 0], params=TreeParams(max_depth=2), n_rounds=2)
    with pytest.raises(InputError):
        tree_shap_matrix(m, X[:, :3])
    with pytest.raises(InputError):
        shap_summary(m, np.zeros((0, X.shape[1])))


def test_explain_merges_all_columns():
    X, _ = random_tree(9)
    m = fit_gbdt(X, X[:, 1] * 3, params=TreeParams(max_depth=2, min_samples_leaf=3), n_rounds=5)
    rep = explain(m, X[:20], [f"c{i}" for i in range(X.shape[1])])
    assert rep.ranking("total_gain")[0][0] == "c1"
    assert rep.ranking("mean_abs_shap")[0][0] == "c1"


@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 5))
@settings(max_examples=25, deadline=None)
def test_brute_force_property(seed, d, depth):
    X, t = random_tree(seed, d=d, n=60, depth=depth)
    x = X[seed % X.shape[0]]
    assert np.allclose(tree_shap(t, x).phi, brute_force_shap(t, x, d), rtol=0, atol=1e-6)
