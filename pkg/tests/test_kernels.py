import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_tc import kernels
from causal_tc._accel import HAVE_NUMBA
from oracles import best_split_bruteforce


def _case(seed, n, k, discrete):
    r = np.random.default_rng(seed)
    X = r.integers(0, 5, size=(n, k)).astype(float) if discrete else r.normal(size=(n, k))
    y = X[:, 0] * 2.0 + r.normal(size=n)
    return X, y


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40), st.integers(1, 4), st.booleans(), st.integers(1, 5))
def test_best_split_matches_bruteforce(seed, n, k, discrete, min_leaf):
    X, y = _case(seed, n, k, discrete)
    col, thr, gain = kernels.best_split_np(X, y, min_leaf)
    bcol, bthr, bgain = best_split_bruteforce(X, y, min_leaf)
    assert gain == pytest.approx(bgain, rel=1e-9, abs=1e-9)
    if bcol >= 0 and col >= 0:
        # the chosen split achieves the brute-force optimum
        left = X[:, col] <= thr
        sse = np.sum((y[left] - y[left].mean()) ** 2) + np.sum((y[~left] - y[~left].mean()) ** 2)
        assert np.sum((y - y.mean()) ** 2) - sse == pytest.approx(bgain, rel=1e-9, abs=1e-9)


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("seed", range(25))
def test_best_split_backends_identical(seed):
    X, y = _case(seed, 30 + seed, 1 + seed % 4, seed % 2 == 0)
    assert kernels.best_split_np(X, y, 3) == tuple(kernels.best_split_nb(X, y, 3))


def test_best_split_no_split_cases():
    X = np.ones((10, 2))
    assert kernels.best_split_np(X, np.arange(10.0), 1)[0] == -1
    X = np.arange(6.0)[:, None]
    assert kernels.best_split_np(X, np.arange(6.0), 4)[0] == -1  # n < 2 * min_leaf


def test_best_split_threshold_between_values():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    y = np.array([0.0, 0.0, 5.0, 5.0])
    col, thr, gain = kernels.best_split_np(X, y, 1)
    assert (col, thr) == (0, 0.5)
    assert gain == pytest.approx(25.0)


def _random_tree(r, depth=4):
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(d):
        i = len(feature)
        feature.append(-1); threshold.append(0.0); left.append(-1); right.append(-1)
        value.append(float(r.normal()))
        if d < depth and r.random() < 0.8:
            feature[i] = int(r.integers(0, 3))
            threshold[i] = float(r.normal())
            left[i] = grow(d + 1)
            right[i] = grow(d + 1)
        return i

    grow(0)
    return (np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64), np.array(value))


def _apply_reference(tree, x):
    f, t, l, r, v = tree
    nd = 0
    while f[nd] >= 0:
        nd = l[nd] if x[f[nd]] <= t[nd] else r[nd]
    return v[nd]


@pytest.mark.parametrize("seed", range(10))
def test_tree_apply(seed):
    r = np.random.default_rng(seed)
    tree = _random_tree(r)
    X = r.normal(size=(50, 3))
    ref = np.array([_apply_reference(tree, x) for x in X])
    np.testing.assert_array_equal(kernels.tree_apply_np(*tree, X), ref)
    if HAVE_NUMBA:
        np.testing.assert_array_equal(kernels.tree_apply_nb(*tree, X), ref)


def _scm_reference(noise, links):
    x = noise.copy()
    g = {0: lambda u: u, 1: lambda u: u * u, 2: np.tanh}
    for t in range(len(x)):
        for p, c, lag, w, tag in links:
            if lag > 0 and lag <= t:
                x[t, c] += w * g[tag](x[t - lag, p])
        for p, c, lag, w, tag in links:
            if lag == 0:
                x[t, c] += w * g[tag](x[t, p])
    return x


def test_simulate_scm_backends_match_reference():
    r = np.random.default_rng(3)
    links = [(0, 0, 1, 0.5, 0), (0, 1, 0, 0.8, 0), (1, 2, 2, 0.3, 1), (2, 2, 1, 0.4, 2), (0, 2, 0, -0.7, 0)]
    noise = r.normal(size=(40, 3))
    arrs = [np.array(a) for a in zip(*links)]
    arrs = [arrs[0].astype(np.int64), arrs[1].astype(np.int64), arrs[2].astype(np.int64),
            arrs[3].astype(float), arrs[4].astype(np.int64)]
    ref = _scm_reference(noise, links)
    np.testing.assert_allclose(kernels.simulate_scm_np(noise, *arrs), ref, rtol=1e-13, atol=1e-13)
    if HAVE_NUMBA:
        np.testing.assert_allclose(kernels.simulate_scm_nb(noise, *arrs), ref, rtol=1e-13, atol=1e-13)


def test_env_flag_selects_numpy_backend():
    code = ("from causal_tc import _accel, kernels;"
            "print(_accel.backend_name(), kernels.best_split is kernels.best_split_np)")
    env = dict(os.environ, CAUSAL_TC_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
def test_forest_identical_across_backends():
    code = ("import numpy as np;from causal_tc.baselines import RandomForest, ForestConfig;"
            "r=np.random.default_rng(0);X=r.normal(size=(300,5));y=X[:,0]**2+r.normal(size=300);"
            "f=RandomForest(ForestConfig(trees=5,seed=1)).fit(X,y);"
            "print(repr(f.importances.tolist()), repr(f.predict(X[:5]).tolist()))")
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, CAUSAL_TC_DISABLE_NUMBA=flag)
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                   text=True, check=True).stdout)
    assert outs[0] == outs[1]
