import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_tc.baselines import (FeatureRanking, ForestConfig, RandomForest, grow_tree,
                                 rank_by_correlation, rank_by_forest_importance, top_k_sets)
from causal_tc.dataset import StormSeries, panel_from_storms
from causal_tc.errors import ValidationError


def panel_from(cols, n_storms=1):
    L = len(next(iter(cols.values()))) // n_storms
    storms = [StormSeries(f"S{i}", np.arange(L), {k: np.asarray(v[i * L:(i + 1) * L], float)
                                                 for k, v in cols.items()}) for i in range(n_storms)]
    return panel_from_storms(storms)


def test_perfect_correlation_first(rng):
    x = rng.normal(size=200)
    p = panel_from({"X": x, "Z": rng.normal(size=200), "Y": 2 * x})
    r = rank_by_correlation(p, "Y", [("X", 0), ("Z", 0)])
    assert r.ordered[0] == ("X", 0) and r.scores[("X", 0)] == pytest.approx(1.0)


def test_independent_small_score(rng):
    p = panel_from({"X": rng.normal(size=10_000), "Y": rng.normal(size=10_000)})
    assert rank_by_correlation(p, "Y", [("X", 0)]).scores[("X", 0)] < 0.05


def test_ties_lexicographic(rng):
    x = rng.normal(size=100)
    p = panel_from({"B": x, "A": x, "Y": x + rng.normal(size=100)})
    r = rank_by_correlation(p, "Y", [("B", 0), ("A", 0)])
    assert r.ordered == (("A", 0), ("B", 0))


def test_constant_flagged(rng):
    p = panel_from({"C": np.ones(50), "Y": rng.normal(size=50)})
    r = rank_by_correlation(p, "Y", [("C", 0)])
    assert r.scores[("C", 0)] == 0 and r.flags[("C", 0)] == "constant"
    with pytest.raises(ValidationError):
        rank_by_correlation(panel_from({"C": [1.0, 2], "Y": [1.0, 3]}), "Y", [("C", 0)])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.floats(0.1, 50), st.floats(-10, 10))
def test_correlation_affine_invariance(seed, a, b):
    r = np.random.default_rng(seed)
    X = r.normal(size=(3, 80))
    y = X.T @ r.normal(size=3) + r.normal(size=80)
    p1 = panel_from({"A": X[0], "B": X[1], "C": X[2], "Y": y})
    p2 = panel_from({"A": a * X[0] + b, "B": X[1], "C": X[2], "Y": y})
    f = [("A", 0), ("B", 0), ("C", 0)]
    assert rank_by_correlation(p1, "Y", f).ordered == rank_by_correlation(p2, "Y", f).ordered


def _forest_panel(seed, informative=True):
    r = np.random.default_rng(seed)
    X = r.normal(size=(5, 400))
    y = (np.sin(2 * X[0]) + 0.2 * r.normal(size=400)) if informative else r.normal(size=400)
    return panel_from({**{f"X{j}": X[j] for j in range(5)}, "Y": y}, n_storms=4)


FEATS = [(f"X{j}", 0) for j in range(5)]
SMALL = ForestConfig(trees=15, max_depth=6, min_leaf=5)


def test_forest_finds_informative_feature():
    hits = 0
    for seed in range(20):
        r = rank_by_forest_importance(_forest_panel(seed), "Y", FEATS, config=SMALL)
        hits += r.ordered[0] == ("X0", 0)
    assert hits >= 18


def test_forest_null_calibration():
    ratios = []
    for seed in range(10):
        s = rank_by_forest_importance(_forest_panel(seed, False), "Y", FEATS, config=SMALL).scores
        ratios.append(max(s.values()) / min(s.values()))
    assert np.mean(ratios) < 3


def test_importances_sum_to_one_and_deterministic():
    p = _forest_panel(1)
    a = rank_by_forest_importance(p, "Y", FEATS, config=SMALL)
    b = rank_by_forest_importance(p, "Y", FEATS, config=SMALL)
    assert a == b
    assert sum(a.scores.values()) == pytest.approx(1.0)
    assert all(v >= 0 for v in a.scores.values())


def test_depth_one_single_feature():
    X = np.column_stack([np.repeat([0.0, 1.0], 20), np.zeros(40)])
    y = X[:, 0] * 3
    f = RandomForest(ForestConfig(trees=1, max_depth=1, min_leaf=1, features_per_split=2,
                                  bootstrap=False)).fit(X, y)
    np.testing.assert_allclose(f.importances, [1.0, 0.0])
    np.testing.assert_allclose(f.predict(X), y)


def test_forest_degenerate_and_small():
    p = panel_from({"X0": np.arange(30.0), "Y": np.ones(30)})
    r = rank_by_forest_importance(p, "Y", [("X0", 0)])
    assert r.flags[("X0", 0)] == "degenerate-target"
    with pytest.raises(ValidationError, match="20"):
        rank_by_forest_importance(panel_from({"X0": np.arange(10.0), "Y": np.arange(10.0)}), "Y",
                                  [("X0", 0)])


def test_tree_structure_consistent(rng):
    X = rng.normal(size=(200, 3))
    y = X[:, 1] ** 2
    t = grow_tree(X, y, 5, 3, 3, rng)
    leaves = t.feature < 0
    assert np.all(t.left[~leaves] > 0) and np.all(t.right[~leaves] > 0)
    assert t.predict(X).shape == (200,)


def test_top_k():
    r = FeatureRanking.from_scores({("A", 1): 0.9, ("B", 1): 0.5, ("C", 1): 0.1})
    sets = top_k_sets(r, [1, 2, 3])
    assert [len(s) for s in sets] == [1, 2, 3]
    for a, b in zip(sets, sets[1:]):
        assert b[:len(a)] == a
    assert top_k_sets(r, [5]) == [list(r.ordered)]
    with pytest.raises(ValidationError):
        top_k_sets(r, [0])


def test_ranking_round_trip(tmp_path):
    r = FeatureRanking.from_scores({("A", 1): 0.25, ("B", 2): 1 / 3})
    r.write(tmp_path / "r.csv")
    assert FeatureRanking.from_text((tmp_path / "r.csv").read_text()).scores == r.scores
