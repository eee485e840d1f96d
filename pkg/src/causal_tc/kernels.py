"""Hot inner loops: regression-tree split search/traversal and SCM simulation.

Each kernel has a numba implementation (``*_nb``) and a vectorised numpy
implementation (``*_np``) that produce the same result; the public names are
bound to one of them according to :mod:`causal_tc._accel`.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = ["best_split", "tree_apply", "simulate_scm", "best_split_np", "best_split_nb",
           "tree_apply_np", "tree_apply_nb", "simulate_scm_np", "simulate_scm_nb"]

LINEAR, SQUARED, TANH = 0, 1, 2


def _midpoint(lo, hi):
    mid = lo + (hi - lo) / 2.0
    # adjacent floats: keep `hi` on the right side
    return lo if mid >= hi else mid


def best_split_np(X, y, min_leaf):
    """Best variance-reduction split over the columns of ``X``.

    Returns ``(column, threshold, gain)``; ``column`` is -1 when no split
    leaves ``min_leaf`` samples on both sides with a positive gain. Samples
    with ``x <= threshold`` go left. Ties resolve to the lowest column, then
    the lowest split position.
    """
    n, k = X.shape
    best_col, best_thr, best_gain = -1, 0.0, 0.0
    if n < 2 * min_leaf:
        return best_col, best_thr, best_gain
    order = np.argsort(X, axis=0, kind="mergesort")
    xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    csum = np.cumsum(ys, axis=0)
    tot = csum[-1]
    lo, hi = min_leaf - 1, n - min_leaf  # left sizes lo+1 .. hi
    idx = np.arange(lo, hi)
    nl = (idx + 1).astype(np.float64)[:, None]
    nr = (n - idx - 1).astype(np.float64)[:, None]
    cl = csum[lo:hi]
    cr = tot[None, :] - cl
    gain = (cl * cl) / nl + (cr * cr) / nr - (tot * tot)[None, :] / n
    valid = xs[lo:hi] < xs[lo + 1:hi + 1]
    gain = np.where(valid, gain, -np.inf)
    for j in range(k):
        i = int(np.argmax(gain[:, j]))
        g = gain[i, j]
        if g > best_gain:
            best_col = j
            best_gain = float(g)
            best_thr = _midpoint(xs[lo + i, j], xs[lo + i + 1, j])
    return best_col, float(best_thr), best_gain


@njit(cache=True)
def best_split_nb(X, y, min_leaf):
    n, k = X.shape
    best_col = -1
    best_thr = 0.0
    best_gain = 0.0
    if n < 2 * min_leaf:
        return best_col, best_thr, best_gain
    xs = np.empty(n)
    csum = np.empty(n)
    for j in range(k):
        order = np.argsort(X[:, j], kind="mergesort")
        acc = 0.0
        for i in range(n):
            xs[i] = X[order[i], j]
            acc += y[order[i]]
            csum[i] = acc
        tot = csum[n - 1]
        col_gain = -np.inf
        col_pos = -1
        for i in range(min_leaf - 1, n - min_leaf):
            if not xs[i] < xs[i + 1]:
                continue
            cl = csum[i]
            cr = tot - cl
            g = (cl * cl) / (i + 1.0) + (cr * cr) / (n - i - 1.0) - (tot * tot) / n
            if g > col_gain:
                col_gain = g
                col_pos = i
        if col_pos >= 0 and col_gain > best_gain:
            best_col = j
            best_gain = col_gain
            lo = xs[col_pos]
            hi = xs[col_pos + 1]
            mid = lo + (hi - lo) / 2.0
            best_thr = lo if mid >= hi else mid
    return best_col, best_thr, best_gain


def tree_apply_np(feature, threshold, left, right, value, X):
    """Predict with a flat tree; ``feature[i] < 0`` marks a leaf."""
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    active = feature[node] >= 0
    while active.any():
        r = rows[active]
        nd = node[r]
        go_left = X[r, feature[nd]] <= threshold[nd]
        node[r] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    return value[node]


@njit(cache=True)
def tree_apply_nb(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for r in range(n):
        nd = 0
        while feature[nd] >= 0:
            if X[r, feature[nd]] <= threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[r] = value[nd]
    return out


def _link_fn_np(tag, u):
    return np.where(tag == SQUARED, u * u, np.where(tag == TANH, np.tanh(u), u))


def simulate_scm_np(noise, parent, child, lag, coeff, tag):
    """Run a lagged SCM forward; links must be sorted by the child's causal order.

    ``x[t, child] += coeff * g(x[t - lag, parent])`` for every link, on top of
    ``x[t] = noise[t]``. Lag-0 links are applied one at a time in order so that
    parents are final before their children read them.
    """
    T = noise.shape[0]
    x = noise.copy()
    lagged = lag > 0
    lp, lc, ll, lw, lt = parent[lagged], child[lagged], lag[lagged], coeff[lagged], tag[lagged]
    inst = np.nonzero(~lagged)[0]
    for t in range(T):
        ok = ll <= t
        if ok.any():
            contrib = lw[ok] * _link_fn_np(lt[ok], x[t - ll[ok], lp[ok]])
            np.add.at(x[t], lc[ok], contrib)
        for i in inst:
            x[t, child[i]] += coeff[i] * _link_fn_np(tag[i], x[t, parent[i]])
    return x


@njit(cache=True)
def simulate_scm_nb(noise, parent, child, lag, coeff, tag):
    T = noise.shape[0]
    x = noise.copy()
    for t in range(T):
        for i in range(parent.shape[0]):
            if lag[i] > 0 and lag[i] <= t:
                u = x[t - lag[i], parent[i]]
                if tag[i] == 1:
                    u = u * u
                elif tag[i] == 2:
                    u = np.tanh(u)
                x[t, child[i]] += coeff[i] * u
        for i in range(parent.shape[0]):
            if lag[i] == 0:
                u = x[t, parent[i]]
                if tag[i] == 1:
                    u = u * u
                elif tag[i] == 2:
                    u = np.tanh(u)
                x[t, child[i]] += coeff[i] * u
    return x


if USE_NUMBA:
    def best_split(X, y, min_leaf):
        col, thr, gain = best_split_nb(X, y, int(min_leaf))
        return int(col), float(thr), float(gain)

    tree_apply = tree_apply_nb
    simulate_scm = simulate_scm_nb
else:
    best_split = best_split_np
    tree_apply = tree_apply_np
    simulate_scm = simulate_scm_np
