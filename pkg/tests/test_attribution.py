import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_tc.attribution import (ShapAttribution, decompose_difference, kernel_shap,
                                   rank_mean_abs_shap, write_attribution_csv,
                                   write_decomposition_csv)
from causal_tc.errors import ValidationError
from causal_tc.regression import fit_mlr
from oracles import linear_shapley, shapley_bruteforce


def _linear(a, b=0.0):
    a = np.asarray(a, float)
    return lambda X: X @ a + b


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 7))
def test_linear_model_exact(seed, d):
    r = np.random.default_rng(seed)
    a = r.normal(size=d)
    bg, X = r.normal(size=(25, d)), r.normal(size=(4, d))
    s = kernel_shap(_linear(a, 0.7), bg, X, seed=seed)
    for i in range(4):
        np.testing.assert_allclose(s.values[i], linear_shapley(a, X[i], bg), atol=1e-6)
    assert np.all(np.abs(s.slack) < 1e-3)


def test_linear_model_sampled_budget():
    r = np.random.default_rng(1)
    d = 12
    a = r.normal(size=d)
    bg, X = r.normal(size=(20, d)), r.normal(size=(3, d))
    s = kernel_shap(_linear(a), bg, X, n_coalitions=300, seed=3)
    assert not s.flags["exact"]
    for i in range(3):
        np.testing.assert_allclose(s.values[i], linear_shapley(a, X[i], bg), atol=1e-6)


def test_nonlinear_matches_enumeration():
    r = np.random.default_rng(2)
    f = lambda X: np.tanh(X[:, 0] * X[:, 1]) + X[:, 2] ** 2 - X[:, 0] * X[:, 3]
    bg, X = r.normal(size=(15, 4)), r.normal(size=(3, 4))
    s = kernel_shap(f, bg, X)
    for i in range(3):
        np.testing.assert_allclose(s.values[i], shapley_bruteforce(f, X[i], bg), atol=1e-8)


def test_dummy_feature_and_additivity():
    r = np.random.default_rng(3)
    f = lambda X: np.sin(X[:, 0]) + X[:, 1] * X[:, 2]
    bg, X = r.normal(size=(30, 4)), r.normal(size=(5, 4))
    s = kernel_shap(f, bg, X)
    np.testing.assert_allclose(s.values[:, 3], 0, atol=1e-8)
    assert np.all(np.abs(s.slack) < 1e-3)


def test_symmetric_duplicates():
    r = np.random.default_rng(4)
    bg = r.normal(size=(30, 1))
    bg = np.hstack([bg, bg, r.normal(size=(30, 1))])
    X = r.normal(size=(6, 1))
    X = np.hstack([X, X, r.normal(size=(6, 1))])
    s = kernel_shap(_linear([0.5, 0.5, 1.0]), bg, X)
    m = np.abs(s.values).mean(axis=0)
    assert m[0] == pytest.approx(m[1], abs=1e-8)


def test_deterministic_given_seed():
    r = np.random.default_rng(5)
    f = lambda X: np.tanh(X).sum(axis=1) * X[:, 0]
    bg, X = r.normal(size=(10, 14)), r.normal(size=(2, 14))
    a = kernel_shap(f, bg, X, n_coalitions=100, seed=9)
    b = kernel_shap(f, bg, X, n_coalitions=100, seed=9)
    np.testing.assert_array_equal(a.values, b.values)


def test_ridge_flag_on_tiny_budget(caplog):
    r = np.random.default_rng(6)
    bg, X = r.normal(size=(10, 10)), r.normal(size=(2, 10))
    s = kernel_shap(_linear(np.ones(10)), bg, X, n_coalitions=4, seed=0)
    assert s.flags.get("ridge") == [0, 1]
    assert np.all(np.isfinite(s.values))


def test_errors():
    with pytest.raises(ValidationError):
        kernel_shap(_linear([1.0]), np.zeros((0, 1)), np.zeros((1, 1)))
    with pytest.raises(ValidationError):
        kernel_shap(_linear([1.0, 1.0]), np.zeros((3, 2)), np.zeros((1, 3)))


# ------------------------------------------------------------ decomposition

def _pair(seed=0, planted=2.0):
    r = np.random.default_rng(seed)
    X = r.normal(size=(400, 3))
    y = X[:, 0] - 0.5 * X[:, 1] + planted * X[:, 2] + 0.1 * r.normal(size=400)
    fa = [("A", 1), ("B", 1)]
    fb = fa + [("C", 1)]
    f = fit_mlr(X[:300, :2], y[:300], fa)
    g = fit_mlr(X[:300], y[:300], fb)
    bg, inst = X[:100], X[300:]
    return (kernel_shap(f, bg[:, :2], inst[:, :2], features=fa),
            kernel_shap(g, bg, inst, features=fb))


def test_decomposition_identity():
    sf, sg = _pair()
    dec = decompose_difference(sf, sg)
    assert dec.added == (("C", 1),)
    np.testing.assert_allclose(dec.reconstruction(), sf.predictions - sg.predictions, atol=1e-12)
    np.testing.assert_allclose(dec.residual, sf.slack - sg.slack, atol=1e-12)


def test_planted_added_feature_dominates():
    sf, sg = _pair()
    dec = decompose_difference(sf, sg)
    share = np.mean(np.abs(dec.added_terms[:, 0])) / np.mean(np.abs(dec.delta_pred))
    assert share > 0.8


def test_identical_models_give_zero():
    sf, _ = _pair()
    dec = decompose_difference(sf, sf)
    assert dec.added == ()
    for arr in (dec.delta_pred, dec.common_terms, dec.residual):
        np.testing.assert_allclose(arr, 0, atol=1e-12)


def test_ignored_added_feature():
    r = np.random.default_rng(7)
    bg, X = r.normal(size=(20, 3)), r.normal(size=(5, 3))
    f = _linear([1.0, 2.0])
    g = _linear([1.0, 2.0, 0.0])
    sf = kernel_shap(f, bg[:, :2], X[:, :2], features=("a", "b"))
    sg = kernel_shap(g, bg, X, features=("a", "b", "c"))
    dec = decompose_difference(sf, sg)
    np.testing.assert_allclose(dec.added_terms, 0, atol=1e-9)
    np.testing.assert_allclose(dec.common_terms, 0, atol=1e-9)


def test_mismatch_lists_symmetric_difference():
    sf, sg = _pair()
    sx = ShapAttribution((("Z", 1), ("A", 1)), 0.0, sf.values, sf.predictions, sf.instances,
                         sf.background, 0, 0)
    with pytest.raises(ValidationError, match="B@1.*Z@1"):
        decompose_difference(sx, sg)


# ------------------------------------------------------------ ranking / io

def _attr(values, feats=(("a", 0), ("b", 0))):
    v = np.atleast_2d(np.asarray(values, float))
    return ShapAttribution(feats, 0.0, v, v.sum(axis=1), v, v, 0, 0)


def test_rank_examples():
    r = rank_mean_abs_shap(_attr([3.0, -5.0]))
    assert r.ordered == (("b", 0), ("a", 0)) and r.scores[("b", 0)] == 5.0
    r = rank_mean_abs_shap(_attr([0.0, 0.0], (("z", 0), ("a", 0))))
    assert r.ordered == (("a", 0), ("z", 0))
    with pytest.raises(ValidationError):
        rank_mean_abs_shap(_attr(np.zeros((0, 2))))


def test_rank_linear_larger_coefficient_first():
    for seed in range(5):
        r = np.random.default_rng(seed)
        bg, X = r.normal(size=(50, 2)), r.normal(size=(40, 2))
        s = kernel_shap(_linear([2.0, 1.0]), bg, X, features=(("x1", 0), ("x2", 0)))
        assert rank_mean_abs_shap(s).ordered[0] == ("x1", 0)


def test_csv_writers(tmp_path):
    sf, sg = _pair()
    write_attribution_csv(sg, tmp_path / "a.csv")
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert rows[0] == ["instance", "prediction", "A@1", "B@1", "C@1"]
    assert rows[1][0] == "base_value" and float(rows[1][1]) == sg.base_value
    assert len(rows) == 2 + len(sg.values)
    assert float(rows[2][2]) == sg.values[0, 0]
    dec = decompose_difference(sf, sg)
    write_decomposition_csv(dec, tmp_path / "d.csv")
    rows = list(csv.reader(open(tmp_path / "d.csv")))
    assert rows[0][:6] == ["instance", "delta_pred", "delta_base", "common_sum", "added_sum", "residual"]
    assert rows[0][-1] == "added:C@1"
    for row in rows[1:]:
        x = list(map(float, row[1:6]))
        assert x[0] == pytest.approx(x[1] + x[2] + x[3] + x[4], abs=1e-12)
