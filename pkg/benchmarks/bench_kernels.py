"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat N]

Kernel-level timings call the ``*_nb`` and ``*_np`` functions directly. The
forest fit runs once per backend in a subprocess, since the backend is
chosen at import from ``CAUSAL_TC_DISABLE_NUMBA``.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from causal_tc import kernels as K

FOREST_SNIPPET = """
import time, numpy as np
from causal_tc._accel import backend_name
from causal_tc.baselines import ForestConfig, RandomForest
r = np.random.default_rng(0)
X = r.normal(size=(2000, 20)); y = X[:, 0] - X[:, 1] ** 2 + r.normal(size=2000)
RandomForest(ForestConfig(trees=2, seed=0)).fit(X, y)   # warm up / compile
t = time.perf_counter()
RandomForest(ForestConfig(trees=50, seed=0)).fit(X, y)
print(backend_name(), time.perf_counter() - t)
"""


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def _tree(depth, rng):
    n = 2 ** (depth + 1) - 1
    inner = 2 ** depth - 1
    feature = np.full(n, -1, np.int64)
    feature[:inner] = rng.integers(0, 10, inner)
    left = np.full(n, -1, np.int64)
    right = np.full(n, -1, np.int64)
    left[:inner] = 2 * np.arange(inner) + 1
    right[:inner] = 2 * np.arange(inner) + 2
    return feature, rng.normal(size=n), left, right, rng.normal(size=n)


def kernel_rows(repeat):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5000, 8))
    y = X[:, 0] + rng.normal(size=5000)
    tree = _tree(10, rng)
    Xa = rng.normal(size=(50000, 10))
    noise = rng.normal(size=(2000, 10))
    m = 30
    parent = rng.integers(0, 10, m).astype(np.int64)
    child = rng.integers(0, 10, m).astype(np.int64)
    lag = rng.integers(1, 4, m).astype(np.int64)
    coeff = rng.uniform(-0.1, 0.1, m)
    tag = np.zeros(m, np.int64)
    cases = {
        "best_split (5000x8)": (lambda: K.best_split_nb(X, y, 5), lambda: K.best_split_np(X, y, 5)),
        "tree_apply (depth 10, 50000 rows)": (lambda: K.tree_apply_nb(*tree, Xa),
                                              lambda: K.tree_apply_np(*tree, Xa)),
        "simulate_scm (2000 steps, 30 links)": (
            lambda: K.simulate_scm_nb(noise, parent, child, lag, coeff, tag),
            lambda: K.simulate_scm_np(noise, parent, child, lag, coeff, tag)),
    }
    for name, (nb, npy) in cases.items():
        nb()  # compile
        yield name, _best(nb, repeat), _best(npy, repeat)


def forest_row():
    times = {}
    for flag in ("0", "1"):
        env = dict(os.environ, CAUSAL_TC_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", FOREST_SNIPPET], env=env, check=True,
                             capture_output=True, text=True).stdout.split()
        times[out[0]] = float(out[1])
    return "forest fit (50 trees, 2000x20)", times["numba"], times["numpy"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':40s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}")
    for name, tn, tp in [*kernel_rows(args.repeat), forest_row()]:
        print(f"{name:40s} {tn:10.4f} {tp:10.4f} {tp / tn:8.1f}x")


if __name__ == "__main__":
    main()
