"""Synthetic lagged structural causal models with known parents, and an
exhaustive-subset CI oracle to check the selection heuristic against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np

from . import kernels
from .citest import is_independent, partial_correlation, pooled_samples
from .dataset import ManifestEntry, panel_from_storms, write_manifest, write_storm_csv, StormSeries
from .discovery import candidate_links
from .errors import ParseError, ValidationError

TAGS = {"linear": kernels.LINEAR, "squared": kernels.SQUARED, "tanh": kernels.TANH}
BLOWUP = 1e6


@dataclass(frozen=True)
class Link:
    parent: str
    child: str
    lag: int
    coeff: float
    tag: str = "linear"


@dataclass(frozen=True)
class ScmSpec:
    variables: tuple
    links: tuple
    target: str
    noise_std: dict = field(default_factory=dict)  # missing entries default to 1
    n_storms: int = 10
    length: int = 100
    seed: int = 0
    burn_in: int | None = None

    def __post_init__(self):
        names = set(self.variables)
        if len(names) != len(self.variables):
            raise ValidationError("duplicate variable names")
        if self.target not in names:
            raise ValidationError(f"target {self.target} is not a declared variable")
        for ln in self.links:
            if ln.parent not in names or ln.child not in names:
                raise ValidationError(f"link {ln.parent}->{ln.child} uses an undeclared variable")
            if ln.lag < 0:
                raise ValidationError("link lags must be non-negative")
            if not math.isfinite(ln.coeff):
                raise ValidationError("link coefficients must be finite")
            if ln.tag not in TAGS:
                raise ValidationError(f"unknown link tag {ln.tag!r}")
        for v, s in self.noise_std.items():
            if v not in names or not s >= 0:
                raise ValidationError(f"bad noise std for {v}")
        if self.n_storms < 1 or self.length < 1:
            raise ValidationError("n_storms and length must be positive")
        self.causal_order()

    def causal_order(self):
        """Topological order of the lag-0 graph (declaration order on ties)."""
        inst = [(l.parent, l.child) for l in self.links if l.lag == 0]
        indeg = {v: 0 for v in self.variables}
        for _, c in inst:
            indeg[c] += 1
        order, ready = [], [v for v in self.variables if indeg[v] == 0]
        while ready:
            v = ready.pop(0)
            order.append(v)
            for p, c in inst:
                if p == v:
                    indeg[c] -= 1
                    if indeg[c] == 0:
                        ready.append(c)
        if len(order) != len(self.variables):
            raise ValidationError("lag-0 links contain a cycle")
        return order

    @property
    def max_lag(self):
        return max((l.lag for l in self.links), default=0)

    def parents_of(self, var):
        return sorted({(l.parent, l.lag) for l in self.links if l.child == var})


def simulate_storm(spec, storm_index):
    """(length, n_vars) realisation for one storm, burn-in discarded."""
    rng = np.random.default_rng([spec.seed, storm_index])
    burn = spec.burn_in if spec.burn_in is not None else 10 * max(spec.max_lag, 1)
    T = burn + spec.length
    V = len(spec.variables)
    pos = {v: i for i, v in enumerate(spec.variables)}
    std = np.array([spec.noise_std.get(v, 1.0) for v in spec.variables])
    noise = rng.standard_normal((T, V)) * std
    rank = {v: i for i, v in enumerate(spec.causal_order())}
    links = sorted(spec.links, key=lambda l: rank[l.child])
    parent = np.array([pos[l.parent] for l in links], dtype=np.int64)
    child = np.array([pos[l.child] for l in links], dtype=np.int64)
    lag = np.array([l.lag for l in links], dtype=np.int64)
    coeff = np.array([l.coeff for l in links], dtype=np.float64)
    tag = np.array([TAGS[l.tag] for l in links], dtype=np.int64)
    x = kernels.simulate_scm(noise, parent, child, lag, coeff, tag)
    if not np.all(np.isfinite(x)) or np.abs(x).max() > BLOWUP:
        raise ValidationError("simulation diverged (|x| > 1e6); rescale the link coefficients")
    return x[burn:]


def generate_panel(spec):
    """Independent storm realisations stacked into a panel, plus the target's parents."""
    storms = []
    for s in range(spec.n_storms):
        x = simulate_storm(spec, s)
        cols = {v: x[:, j].copy() for j, v in enumerate(spec.variables)}
        storms.append(StormSeries(f"S{s:03d}", np.arange(spec.length, dtype=np.int64), cols))
    panel = panel_from_storms(storms, codes=list(spec.variables))
    return replace(panel, target_code=spec.target), set(spec.parents_of(spec.target))


# -------------------------------------------------------------- spec files


def parse_spec(text):
    """Key-value spec; edges as ``link parent child lag coeff [tag]`` lines."""
    kv, links, noise = {}, [], {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("link "):
            parts = line.split()
            if len(parts) not in (5, 6):
                raise ParseError(f"line {lineno}: expected 'link parent child lag coeff [tag]'")
            try:
                links.append(Link(parts[1], parts[2], int(parts[3]), float(parts[4]),
                                  parts[5] if len(parts) == 6 else "linear"))
            except ValueError:
                raise ParseError(f"line {lineno}: bad lag or coefficient") from None
            continue
        if line.startswith("noise "):
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"line {lineno}: expected 'noise variable std'")
            noise[parts[1]] = float(parts[2])
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ParseError(f"line {lineno}: expected key = value")
        kv[key.strip()] = val.strip()
    known = {"variables", "target", "n_storms", "length", "seed", "burn_in", "noise_std", "test_storms"}
    unknown = sorted(set(kv) - known)
    if unknown:
        raise ParseError(f"unknown spec key(s): {', '.join(unknown)}")
    try:
        variables = tuple(v.strip() for v in kv["variables"].split(",") if v.strip())
        default_std = float(kv.get("noise_std", 1.0))
        std = {v: default_std for v in variables}
        std.update(noise)
        spec = ScmSpec(variables, tuple(links), kv["target"], std,
                       int(kv.get("n_storms", 10)), int(kv.get("length", 100)), int(kv.get("seed", 0)),
                       int(kv["burn_in"]) if "burn_in" in kv else None)
    except KeyError as e:
        raise ParseError(f"missing spec key {e.args[0]}") from None
    return spec, int(kv.get("test_storms", 0))


def format_spec(spec, test_storms=0):
    lines = [f"variables = {','.join(spec.variables)}", f"target = {spec.target}",
             f"n_storms = {spec.n_storms}", f"length = {spec.length}", f"seed = {spec.seed}"]
    if spec.burn_in is not None:
        lines.append(f"burn_in = {spec.burn_in}")
    if test_storms:
        lines.append(f"test_storms = {test_storms}")
    lines += [f"noise {v} {spec.noise_std[v]!r}" for v in spec.variables if v in spec.noise_std]
    lines += [f"link {l.parent} {l.child} {l.lag} {l.coeff!r} {l.tag}" for l in spec.links]
    return "\n".join(lines) + "\n"


def load_spec(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"spec file not found: {path}")
    return parse_spec(path.read_text(encoding="utf-8"))


def export_panel(panel, out_dir, truth=None, test_ids=()):
    """Write one CSV per storm, a manifest and (optionally) the truth file."""
    out = Path(out_dir)
    (out / "storms").mkdir(parents=True, exist_ok=True)
    entries = []
    test = set(test_ids)
    for i, sid in enumerate(panel.storm_ids):
        rel = Path("storms") / f"{sid}.csv"
        write_storm_csv(panel.storm_series(i), out / rel)
        entries.append(ManifestEntry(sid, rel, "test" if sid in test else "train"))
    write_manifest(entries, out / "manifest.csv")
    if truth is not None:
        lines = [f"# target={panel.target_code}", "parent,lag"]
        lines += [f"{p},{l}" for p, l in sorted(truth)]
        (out / "truth.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out / "manifest.csv"


# -------------------------------------------------------------------- oracle


def exhaustive_ci_oracle(panel, target, pc_alpha, candidates=None, lag_min=None, lag_max=None,
                         storm_ids=None):
    """Retain a candidate iff no subset of the other candidates separates it from the target."""
    if candidates is None:
        if lag_min is None or lag_max is None:
            raise ValidationError("give candidates or a lag window")
        candidates = candidate_links(panel.codes, target, lag_min, lag_max)
    candidates = sorted(candidates)
    if len(candidates) > 6:
        raise ValidationError(f"exhaustive oracle refuses {len(candidates)} > 6 candidates")
    kept = []
    for c in candidates:
        others = [o for o in candidates if o != c]
        separated = False
        for size in range(len(others) + 1):
            for S in combinations(others, size):
                res = partial_correlation(pooled_samples(panel, c, target, list(S), storm_ids), size)
                if is_independent(res, pc_alpha):
                    separated = True
                    break
            if separated:
                break
        if not separated:
            kept.append(c)
    return kept


# ------------------------------------------------------------- scenarios


def _spec(variables, links, target, **kw):
    return ScmSpec(tuple(variables), tuple(Link(*l) for l in links), target, **kw)


def motif_spec(kind, seed=0, n_storms=25, length=220, strength=0.6):
    """Small linear Gaussian systems around target ``Y`` with one-step lags.

    ``kind`` is one of chain, fork, collider, confounder, mixed.
    """
    a = strength
    if kind == "chain":        # X1 -> X2 -> Y
        links = [("X1", "X2", 0, 0.8), ("X2", "Y", 1, a)]
    elif kind == "fork":       # X1 <- C -> Y, C observed
        links = [("C", "X1", 0, 0.8), ("C", "Y", 1, a)]
    elif kind == "collider":   # X1 -> Y <- X2, X1 indep X2
        links = [("X1", "Y", 1, a), ("X2", "Y", 1, a)]
    elif kind == "confounder": # C -> X1, C -> Y, X1 -/-> Y; plus an independent parent
        links = [("C", "X1", 0, 0.9), ("C", "Y", 1, a), ("X2", "Y", 1, a)]
    elif kind == "mixed":      # chain + collider + noise variable
        links = [("X1", "X2", 0, 0.8), ("X2", "Y", 1, a), ("X3", "Y", 1, a)]
    else:
        raise ValidationError(f"unknown motif {kind!r}")
    variables = sorted({v for l in links for v in l[:2]} | {"N1"})
    variables.remove("Y")
    variables.append("Y")
    return _spec(variables, links, "Y", n_storms=n_storms, length=length, seed=seed)


def decoy_spec(seed=0, n_decoys=40, n_storms=45, length=60, decoy_noise=0.5):
    """Three true parents of ``Y``; ``n_decoys`` noisy proxies of the strongest one.

    The decoys share a common cause (P1) with the target but have no effect on it.
    """
    links = [("P1", "Y", 1, 1.0), ("P2", "Y", 1, 0.5), ("P3", "Y", 1, 0.4),
             ("P1", "P1", 1, 0.5), ("P2", "P2", 1, 0.5), ("P3", "P3", 1, 0.5)]
    rng = np.random.default_rng([seed, 7])
    decoys = [f"D{i:02d}" for i in range(n_decoys)]
    links += [("P1", d, 0, float(rng.uniform(0.8, 1.2))) for d in decoys]
    std = {d: decoy_noise for d in decoys}
    return _spec(["P1", "P2", "P3", *decoys, "Y"], links, "Y", noise_std=std,
                 n_storms=n_storms, length=length, seed=seed)


def squared_effect_spec(seed=0, n_storms=30, length=40, noise=0.3):
    """``Y`` driven by a squared parent (X1) and a weak linear one (X2)."""
    links = [("X1", "Y", 1, 1.0, "squared"), ("X2", "Y", 1, 0.5)]
    return _spec(["X1", "X2", "Y"], links, "Y", noise_std={"Y": noise},
                 n_storms=n_storms, length=length, seed=seed)


def screening_spec(seed=0, n_storms=40, length=120, planted=0.6):
    """VMAX random walk forced by persistent base predictors B1, B2 and a planted CAND.

    ``DUP`` is an exact copy of B1, ``PROXY`` a noisy copy of CAND with no
    effect of its own and ``NOISE`` unrelated white noise; PMIN mirrors VMAX.
    """
    links = [("B1", "B1", 1, 0.9), ("B2", "B2", 1, 0.9), ("CAND", "CAND", 1, 0.9),
             ("B1", "DUP", 0, 1.0), ("CAND", "PROXY", 0, 1.0),
             ("VMAX", "VMAX", 1, 1.0), ("B1", "VMAX", 1, 0.8), ("B2", "VMAX", 1, -0.5),
             ("CAND", "VMAX", 1, planted), ("VMAX", "PMIN", 0, -1.0)]
    std = {"B1": 0.45, "B2": 0.45, "CAND": 0.45, "NOISE": 0.45, "DUP": 0.0, "PROXY": 0.3,
           "VMAX": 1.0, "PMIN": 0.5}
    return _spec(["B1", "B2", "CAND", "NOISE", "DUP", "PROXY", "VMAX", "PMIN"], links, "VMAX",
                 noise_std=std, n_storms=n_storms, length=length, seed=seed, burn_in=30)
