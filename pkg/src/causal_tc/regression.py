"""Regression heads (least-squares MLR, MLP) and skill metrics."""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .dataset import feature_label
from .errors import RankDeficientError, TrainingError, ValidationError

RANK_TOL = 1e-10


# ------------------------------------------------------------------ metrics


@dataclass(frozen=True)
class Metrics:
    r2: float
    pcc: float
    mae: float
    n: int
    r2_defined: bool = True


def evaluate(y_true, y_pred):
    y = np.asarray(y_true, float)
    f = np.asarray(y_pred, float)
    if y.shape != f.shape:
        raise ValidationError(f"length mismatch: {y.shape} vs {f.shape}")
    if y.size < 2:
        raise ValidationError("need at least 2 samples to evaluate")
    sse = float(np.sum((y - f) ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    r2_ok = sst > 0.0
    r2 = 1.0 - sse / sst if r2_ok else math.nan
    dy, df = y - y.mean(), f - f.mean()
    den = math.sqrt(float(dy @ dy) * float(df @ df))
    pcc = float(np.clip((dy @ df) / den, -1.0, 1.0)) if den > 0 else math.nan
    mae = float(np.mean(np.abs(y - f)))
    return Metrics(r2, pcc, mae, int(y.size), r2_ok)


# ---------------------------------------------------------------------- MLR


@dataclass(frozen=True)
class MlrModel:
    features: tuple
    coef: np.ndarray
    intercept: float
    se: np.ndarray          # standard errors of coef
    tstat: np.ndarray
    intercept_se: float = math.nan
    sigma2: float = math.nan
    df_resid: int = 0
    standardization: dict = field(default_factory=dict)

    kind = "mlr"

    def predict(self, X):
        X = _check_X(X, len(self.coef))
        return X @ self.coef + self.intercept


def _check_X(X, d):
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None] if d == 1 else X[None, :]
    if X.shape[1] != d:
        raise ValidationError(f"expected {d} features, got {X.shape[1]}")
    return X


def _collinear_columns(A, names):
    norms = np.linalg.norm(A, axis=0)
    scaled = A / np.where(norms > 0, norms, 1.0)
    _, s, vt = np.linalg.svd(scaled, full_matrices=False)
    smin = float(s[-1]) if s.size else 0.0
    rel = smin / float(s[0]) if s.size and s[0] > 0 else 0.0
    zero = norms == 0
    if rel > RANK_TOL and not zero.any():
        return None, smin
    v = np.abs(vt[-1])
    involved = [names[j] for j in range(len(names)) if zero[j] or v[j] > 0.1 * v.max()]
    return involved, smin


def fit_mlr(X, y, features=None, standardization=None):
    """Least squares with intercept via Householder QR, plus coefficient t-stats."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if y.shape != (n,):
        raise ValidationError("X and y have different numbers of rows")
    if n < d + 1:
        raise ValidationError(f"need at least {d + 1} rows for {d} features, got {n}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValidationError("fit_mlr requires complete, finite cases")
    if features is None:
        features = tuple(f"x{j}" for j in range(d))
    A = np.column_stack([np.ones(n), X])
    names = ["intercept", *(feature_label(f) for f in features)]
    bad, smin = _collinear_columns(A, names)
    if bad is not None:
        raise RankDeficientError(
            f"design is rank deficient (smallest singular value {smin:.3g}); "
            f"collinear columns: {', '.join(bad)}", bad, smin)
    Q, R = np.linalg.qr(A)
    beta = solve_triangular(R, Q.T @ y)
    resid = y - A @ beta
    dof = n - d - 1
    if dof > 0:
        sigma2 = float(resid @ resid) / dof
        Rinv = solve_triangular(R, np.eye(d + 1))
        se_all = np.sqrt(sigma2 * np.sum(Rinv * Rinv, axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            t_all = beta / se_all
    else:
        sigma2 = math.nan
        se_all = np.full(d + 1, np.nan)
        t_all = np.full(d + 1, np.nan)
    return MlrModel(tuple(features), beta[1:].copy(), float(beta[0]), se_all[1:].copy(),
                    t_all[1:].copy(), float(se_all[0]), sigma2, dof, dict(standardization or {}))


# ---------------------------------------------------------------------- MLP

HIDDEN = (512, 512, 512, 512)


def default_activations(n_hidden):
    return ("relu",) * (n_hidden - 1) + ("tanh", "linear")


@dataclass(frozen=True)
class MlpConfig:
    hidden: tuple = HIDDEN
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 1000
    batch_size: int | None = None  # None = full batch
    window: int = 50
    seed: int = 0
    dtype: str = "float64"


@dataclass(frozen=True)
class MlpModel:
    features: tuple
    weights: tuple
    biases: tuple
    activations: tuple
    seed: int = 0
    train_loss: tuple = ()
    val_loss: tuple = ()
    stopped_epoch: int = 0
    standardization: dict = field(default_factory=dict)

    kind = "mlp"

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def predict(self, X):
        X = _check_X(X, self.weights[0].shape[0])
        return _forward(self.weights, self.biases, self.activations, X)[-1][:, 0]


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _forward(W, b, acts, X):
    hs = [X]
    h = X
    for Wl, bl, a in zip(W, b, acts):
        h = _act(a, h @ Wl + bl)
        hs.append(h)
    return hs


def mlp_loss_and_grads(weights, biases, activations, X, y):
    """MSE and its gradients with respect to every weight and bias."""
    hs = _forward(weights, biases, activations, X)
    pred = hs[-1][:, 0]
    err = pred - y
    loss = float(np.mean(err * err))
    g = (2.0 / len(y)) * err[:, None]
    gW, gb = [None] * len(weights), [None] * len(weights)
    for l in range(len(weights) - 1, -1, -1):
        a, out = activations[l], hs[l + 1]
        if a == "relu":
            g = g * (out > 0)
        elif a == "tanh":
            g = g * (1.0 - out * out)
        gW[l] = hs[l].T @ g
        gb[l] = g.sum(axis=0)
        if l:
            g = g @ weights[l].T
    return loss, gW, gb


def init_mlp(d, hidden=HIDDEN, seed=0):
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [d, *hidden, 1]
    acts = default_activations(len(hidden))
    W, b = [], []
    for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = 6.0 if acts[i] == "relu" else 3.0
        lim = math.sqrt(gain / fi)
        W.append(rng.uniform(-lim, lim, size=(fi, fo)))
        b.append(np.zeros(fo))
    return W, b, acts


def should_stop(val_history, window=50):
    """Current validation loss above the mean of the preceding ``window`` losses.

    Only applies once ``window`` epochs have completed before the current one.
    """
    if len(val_history) <= window:
        return False
    return val_history[-1] > float(np.mean(val_history[-window - 1:-1]))


def fit_mlp(X_train, y_train, X_val, y_val, config=None, features=None, standardization=None):
    """Adam on MSE with the moving-average early-stopping rule.

    Returns the parameters at the epoch on which training stopped.
    """
    cfg = config or MlpConfig()
    dt = np.dtype(cfg.dtype)
    X = np.asarray(X_train, dt)
    y = np.asarray(y_train, dt)
    Xv = np.asarray(X_val, dt)
    yv = np.asarray(y_val, dt)
    if X.ndim == 1:
        X = X[:, None]
    if Xv.ndim == 1:
        Xv = Xv[:, None]
    if len(yv) == 0:
        raise ValidationError("validation set is empty")
    n, d = X.shape
    W, b, acts = init_mlp(d, cfg.hidden, cfg.seed)
    W = [w.astype(dt) for w in W]
    b = [x.astype(dt) for x in b]
    params = W + b
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng([cfg.seed, 1])
    bs = n if cfg.batch_size is None else int(cfg.batch_size)
    step = 0
    tr_hist, va_hist = [], []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = np.arange(n) if bs >= n else rng.permutation(n)
        ep_loss = 0.0
        for bi, start in enumerate(range(0, n, bs)):
            idx = order[start:start + bs]
            loss, gW, gb = mlp_loss_and_grads(W, b, acts, X[idx] if bs < n else X, y[idx] if bs < n else y)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            ep_loss += loss * len(idx)
            step += 1
            c1 = 1.0 - cfg.beta1 ** step
            c2 = 1.0 - cfg.beta2 ** step
            for i, gr in enumerate(gW + gb):
                m[i] *= cfg.beta1
                m[i] += (1.0 - cfg.beta1) * gr
                v[i] *= cfg.beta2
                v[i] += (1.0 - cfg.beta2) * gr * gr
                params[i] -= cfg.lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + cfg.eps)
        tr_hist.append(ep_loss / n)
        pv = _forward(W, b, acts, Xv)[-1][:, 0]
        va_hist.append(float(np.mean((pv - yv) ** 2)))
        if should_stop(va_hist, cfg.window):
            break
    return MlpModel(tuple(features or (f"x{j}" for j in range(d))),
                    tuple(w.copy() for w in W), tuple(x.copy() for x in b), acts, cfg.seed,
                    tuple(tr_hist), tuple(va_hist), epoch, dict(standardization or {}))


def predict(model, X):
    return model.predict(X)


# ------------------------------------------------------------ serialization


def _feature_json(features):
    return [list(f) if isinstance(f, tuple) else f for f in features]


def _feature_tuple(features):
    return tuple(tuple(f) if isinstance(f, list) else f for f in features)


def save_model(model, path):
    """Write a self-describing ``.npz`` (arrays stored bit-exactly)."""
    meta = {"kind": model.kind, "features": _feature_json(model.features),
            "standardization": {k: [float(a).hex(), float(b).hex()]
                                for k, (a, b) in model.standardization.items()}}
    arrays = {}
    if model.kind == "mlr":
        meta.update(intercept=model.intercept.hex(), intercept_se=float(model.intercept_se).hex(),
                    sigma2=float(model.sigma2).hex(), df_resid=model.df_resid)
        arrays.update(coef=model.coef, se=model.se, tstat=model.tstat)
    else:
        meta.update(activations=list(model.activations), seed=model.seed,
                    stopped_epoch=model.stopped_epoch, n_layers=len(model.weights))
        for i, (w, bb) in enumerate(zip(model.weights, model.biases)):
            arrays[f"W{i}"] = w
            arrays[f"b{i}"] = bb
        arrays["train_loss"] = np.asarray(model.train_loss, float)
        arrays["val_loss"] = np.asarray(model.val_loss, float)
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_model(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"model file not found: {path}")
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        arrs = {k: z[k].copy() for k in z.files if k != "meta"}
    feats = _feature_tuple(meta["features"])
    std = {k: (float.fromhex(a), float.fromhex(b)) for k, (a, b) in meta["standardization"].items()}
    if meta["kind"] == "mlr":
        return MlrModel(feats, arrs["coef"], float.fromhex(meta["intercept"]), arrs["se"],
                        arrs["tstat"], float.fromhex(meta["intercept_se"]),
                        float.fromhex(meta["sigma2"]), int(meta["df_resid"]), std)
    n = meta["n_layers"]
    return MlpModel(feats, tuple(arrs[f"W{i}"] for i in range(n)), tuple(arrs[f"b{i}"] for i in range(n)),
                    tuple(meta["activations"]), int(meta["seed"]), tuple(arrs["train_loss"].tolist()),
                    tuple(arrs["val_loss"].tolist()), int(meta["stopped_epoch"]), std)
