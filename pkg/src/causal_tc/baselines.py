"""Non-causal feature rankings: |correlation| and random-forest importance."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .dataset import design_rows
from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureRanking:
    ordered: tuple
    scores: dict
    flags: dict = field(default_factory=dict)

    @classmethod
    def from_scores(cls, scores, flags=None):
        ordered = tuple(sorted(scores, key=lambda f: (-scores[f], f)))
        return cls(ordered, dict(scores), dict(flags or {}))

    def __len__(self):
        return len(self.ordered)

    def to_text(self):
        lines = ["predictor,lag,score"]
        lines += [f"{c},{l},{self.scores[(c, l)]!r}" for c, l in self.ordered]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        scores = {}
        for line in text.splitlines()[1:]:
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(f"bad ranking line {line!r}")
            scores[(parts[0], int(parts[1]))] = float(parts[2])
        return cls.from_scores(scores)

    def write(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")


def rank_by_correlation(panel, target, features, train_ids=None):
    """|Pearson r| of each lagged feature with the target, per-feature complete cases."""
    scores, flags = {}, {}
    for f in features:
        X, y = design_rows(panel, [f], target, train_ids)
        if len(y) < 3:
            raise ValidationError(f"fewer than 3 complete samples for {f}")
        x = X[:, 0] - X[:, 0].mean()
        yc = y - y.mean()
        den = math.sqrt(float(x @ x) * float(yc @ yc))
        if np.ptp(X[:, 0]) == 0.0 or np.ptp(y) == 0.0 or den == 0.0:
            scores[f] = 0.0
            flags[f] = "constant"
        else:
            scores[f] = abs(float(x @ yc) / den)
    return FeatureRanking.from_scores(scores, flags)


# -------------------------------------------------------------------- forest


@dataclass(frozen=True)
class ForestConfig:
    trees: int = 200
    max_depth: int = 12
    min_leaf: int = 5
    features_per_split: int | None = None  # None = ceil(sqrt(d))
    bootstrap: bool = True
    seed: int = 0


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    importance: np.ndarray

    def predict(self, X):
        return kernels.tree_apply(self.feature, self.threshold, self.left, self.right,
                                  self.value, np.ascontiguousarray(X, dtype=np.float64))


def grow_tree(X, y, max_depth, min_leaf, k, rng):
    """Depth-first variance-reduction tree; ``k`` features drawn per node."""
    n, d = X.shape
    feat, thr, left, right, val = [], [], [], [], []
    importance = np.zeros(d)
    stack = [(np.arange(n), 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        node = len(feat)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        yi = y[idx]
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        val.append(float(yi.mean()))
        if depth >= max_depth or len(idx) < 2 * min_leaf or np.all(yi == yi[0]):
            continue
        cols = np.sort(rng.choice(d, size=k, replace=False)) if k < d else np.arange(d)
        c, t, gain = kernels.best_split(np.ascontiguousarray(X[np.ix_(idx, cols)]), yi, min_leaf)
        if c < 0:
            continue
        j = int(cols[c])
        feat[node] = j
        thr[node] = t
        importance[j] += gain
        go_left = X[idx, j] <= t
        # right pushed first so the left subtree is numbered first
        stack.append((idx[~go_left], depth + 1, node, True))
        stack.append((idx[go_left], depth + 1, node, False))
    return RegressionTree(np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
                          np.array(right, dtype=np.int64), np.array(val), importance)


class RandomForest:
    """Bootstrap ensemble of regression trees (tree ``i`` seeded with ``seed + i``)."""

    def __init__(self, config=None):
        self.config = config or ForestConfig()
        self.trees = []

    def fit(self, X, y):
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        cfg = self.config
        n, d = X.shape
        k = cfg.features_per_split or math.ceil(math.sqrt(d))
        k = max(1, min(d, k))
        self.trees = []
        for i in range(cfg.trees):
            rng = np.random.default_rng(cfg.seed + i)
            idx = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
            self.trees.append(grow_tree(X[idx], y[idx], cfg.max_depth, cfg.min_leaf, k, rng))
        return self

    def predict(self, X):
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    @property
    def importances(self):
        tot = np.mean([t.importance for t in self.trees], axis=0)
        s = tot.sum()
        return tot / s if s > 0 else tot


def rank_by_forest_importance(panel, target, features, train_ids=None, config=None):
    """Impurity (variance) decrease importances, averaged over trees, summing to 1."""
    features = list(features)
    X, y = design_rows(panel, features, target, train_ids)
    if len(y) < 20:
        raise ValidationError(f"need at least 20 complete training samples, got {len(y)}")
    if np.var(y) == 0.0:
        u = 1.0 / len(features)
        return FeatureRanking.from_scores({f: u for f in features},
                                          {f: "degenerate-target" for f in features})
    forest = RandomForest(config).fit(X, y)
    imp = forest.importances
    if imp.sum() == 0:
        u = 1.0 / len(features)
        return FeatureRanking.from_scores({f: u for f in features},
                                          {f: "no-split" for f in features})
    return FeatureRanking.from_scores({f: float(v) for f, v in zip(features, imp)})


def top_k_sets(ranking, ks):
    """Nested prefixes of the ranking, one per ``k``."""
    out = []
    for k in ks:
        if k < 1:
            raise ValidationError("k must be positive")
        if k > len(ranking):
            log.warning("k=%d exceeds ranking size %d; truncating", k, len(ranking))
            k = len(ranking)
        out.append(list(ranking.ordered[:k]))
    return out
