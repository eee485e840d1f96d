"""Kernel SHAP attributions and the two-model prediction-difference split."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .baselines import FeatureRanking
from .dataset import feature_label
from .errors import ValidationError

log = logging.getLogger(__name__)

RIDGE = 1e-8
MAX_EVAL_ROWS = 200_000


@dataclass(frozen=True)
class ShapAttribution:
    features: tuple
    base_value: float
    values: np.ndarray        # (instances, features)
    predictions: np.ndarray   # model output on each instance
    instances: np.ndarray
    background: np.ndarray
    n_coalitions: int
    seed: int
    flags: dict = field(default_factory=dict)

    @property
    def slack(self):
        """Additivity residual per instance: prediction - base - sum(values)."""
        return self.predictions - self.base_value - self.values.sum(axis=1)


def _as_fn(model):
    return model.predict if hasattr(model, "predict") else model


def shapley_kernel_weight(d, s):
    return (d - 1) / (math.comb(d, s) * s * (d - s))


def default_coalitions(d):
    return min(2 * d + 2048, 2 ** d)


def _all_coalitions(d):
    rows, w = [], []
    for s in range(1, d):
        ws = shapley_kernel_weight(d, s)
        for c in combinations(range(d), s):
            z = np.zeros(d, dtype=bool)
            z[list(c)] = True
            rows.append(z)
            w.append(ws)
    return np.array(rows).reshape(-1, d), np.array(w)


def _sample_coalitions(d, m, rng):
    """Paired sampling with sizes drawn from the Shapley-kernel size law."""
    sizes = np.arange(1, d)
    p = (d - 1) / (sizes * (d - sizes))
    p /= p.sum()
    seen = {}
    half = max(1, m // 2)
    for _ in range(half):
        s = int(rng.choice(sizes, p=p))
        z = np.zeros(d, dtype=bool)
        z[rng.choice(d, size=s, replace=False)] = True
        for zz in (z, ~z):
            key = zz.tobytes()
            if key in seen:
                seen[key][1] += 1.0
            else:
                seen[key] = [zz, 1.0]
    Z = np.array([v[0] for v in seen.values()])
    w = np.array([v[1] for v in seen.values()])
    return Z, w


def _coalition_values(f, x, background, Z):
    """Mean model output with coalition features fixed at ``x``."""
    nb, d = background.shape
    out = np.empty(len(Z))
    step = max(1, MAX_EVAL_ROWS // nb)
    for start in range(0, len(Z), step):
        Zc = Z[start:start + step]
        batch = np.broadcast_to(background, (len(Zc), nb, d)).copy()
        batch = np.where(Zc[:, None, :], x[None, None, :], batch)
        pred = np.asarray(f(batch.reshape(-1, d)), float).reshape(len(Zc), nb)
        out[start:start + step] = pred.mean(axis=1)
    return out


def _solve(Z, w, y, total):
    """Weighted least squares with sum(phi) = total imposed by elimination."""
    d = Z.shape[1]
    Zf = Z.astype(float)
    A = Zf[:, :-1] - Zf[:, -1:]
    b = y - Zf[:, -1] * total
    AtW = A.T * w
    M = AtW @ A
    rhs = AtW @ b
    ridge = False
    try:
        if np.linalg.cond(M) > 1e12:
            raise np.linalg.LinAlgError
        head = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        ridge = True
        head = np.linalg.solve(M + RIDGE * np.eye(d - 1), rhs)
    return np.append(head, total - head.sum()), ridge


def kernel_shap(model, background, instances, n_coalitions=None, seed=0, features=None):
    """Shapley values with marginal (background-average) imputation.

    All proper coalitions are enumerated when the budget allows; otherwise
    coalitions are sampled with a per-instance generator derived from
    ``seed`` and the instance index.
    """
    f = _as_fn(model)
    bg = np.atleast_2d(np.asarray(background, float))
    Xi = np.atleast_2d(np.asarray(instances, float))
    if bg.shape[0] == 0:
        raise ValidationError("background is empty")
    d = bg.shape[1]
    if Xi.shape[1] != d:
        raise ValidationError(f"instances have {Xi.shape[1]} features, background {d}")
    m = default_coalitions(d) if n_coalitions is None else int(n_coalitions)
    base = float(np.mean(f(bg)))
    preds = np.asarray(f(Xi), float)
    values = np.zeros_like(Xi)
    exact = 2 ** d - 2 <= max(m - 2, 0) or d <= 1
    if exact and d > 1:
        Z_all, w_all = _all_coalitions(d)
    ridge_rows = []
    for i, x in enumerate(Xi):
        total = preds[i] - base
        if d == 1:
            values[i, 0] = total
            continue
        if exact:
            Z, w = Z_all, w_all
        else:
            Z, w = _sample_coalitions(d, m - 2, np.random.default_rng([seed, i]))
        v = _coalition_values(f, x, bg, Z) - base
        values[i], ridged = _solve(Z, w, v, total)
        if ridged:
            ridge_rows.append(i)
    flags = {"exact": bool(exact)}
    if ridge_rows:
        flags["ridge"] = ridge_rows
        log.warning("ridge fallback used for %d instance(s)", len(ridge_rows))
    feats = tuple(features) if features is not None else tuple(getattr(model, "features", range(d)))
    return ShapAttribution(feats, base, values, preds, Xi, bg, m, seed, flags)


@dataclass(frozen=True)
class DifferenceDecomposition:
    common: tuple
    added: tuple
    delta_pred: np.ndarray     # f(x) - g(x)
    delta_base: float          # B_f - B_g
    common_terms: np.ndarray   # SHAP^f - SHAP^g per common feature
    added_terms: np.ndarray    # -SHAP^g per added feature
    residual: np.ndarray

    def reconstruction(self):
        return self.delta_base + self.common_terms.sum(axis=1) + self.added_terms.sum(axis=1) + self.residual


def decompose_difference(shap_f, shap_g, common=None, added=None):
    """Split ``f(x) - g(x)`` into base, common-feature and added-feature terms."""
    ff, fg = list(shap_f.features), list(shap_g.features)
    common = list(ff if common is None else common)
    added = [c for c in fg if c not in set(common)] if added is None else list(added)
    if set(ff) != set(common) or set(fg) != set(common) | set(added) or set(common) & set(added):
        diff = sorted(map(feature_label, set(ff) ^ set(fg)))
        raise ValidationError("feature sets do not nest: symmetric difference "
                              + (", ".join(diff) if diff else "(none; check common/added lists)"))
    if shap_f.values.shape[0] != shap_g.values.shape[0]:
        raise ValidationError("attributions cover different numbers of instances")
    fi = [ff.index(c) for c in common]
    gi = [fg.index(c) for c in common]
    ai = [fg.index(c) for c in added]
    delta = shap_f.predictions - shap_g.predictions
    delta_base = shap_f.base_value - shap_g.base_value
    common_terms = shap_f.values[:, fi] - shap_g.values[:, gi]
    added_terms = -shap_g.values[:, ai]
    residual = delta - (delta_base + common_terms.sum(axis=1) + added_terms.sum(axis=1))
    return DifferenceDecomposition(tuple(common), tuple(added), delta, delta_base,
                                   common_terms, added_terms, residual)


def rank_mean_abs_shap(attribution):
    if attribution.values.size == 0:
        raise ValidationError("empty attribution")
    scores = np.mean(np.abs(attribution.values), axis=0)
    feats = [f if isinstance(f, tuple) else (str(f), 0) for f in attribution.features]
    return FeatureRanking.from_scores({f: float(s) for f, s in zip(feats, scores)})


def write_attribution_csv(attr, path, instance_ids=None):
    """Header, a ``base_value`` row, then one row of SHAP values per instance."""
    ids = list(instance_ids) if instance_ids is not None else list(range(len(attr.values)))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "prediction", *map(feature_label, attr.features)])
        w.writerow(["base_value", repr(attr.base_value), *([""] * len(attr.features))])
        for iid, pred, row in zip(ids, attr.predictions, attr.values):
            w.writerow([iid, repr(float(pred)), *(repr(float(v)) for v in row)])


def write_decomposition_csv(dec, path, instance_ids=None):
    ids = list(instance_ids) if instance_ids is not None else list(range(len(dec.delta_pred)))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "delta_pred", "delta_base", "common_sum", "added_sum", "residual",
                    *(f"common:{feature_label(c)}" for c in dec.common),
                    *(f"added:{feature_label(c)}" for c in dec.added)])
        cs = dec.common_terms.sum(axis=1)
        as_ = dec.added_terms.sum(axis=1)
        for k, iid in enumerate(ids):
            w.writerow([iid, repr(float(dec.delta_pred[k])), repr(float(dec.delta_base)),
                        repr(float(cs[k])), repr(float(as_[k])), repr(float(dec.residual[k])),
                        *(repr(float(v)) for v in dec.common_terms[k]),
                        *(repr(float(v)) for v in dec.added_terms[k])])
