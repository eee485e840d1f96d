"""Multidata PC-stable selection of lagged parents of a single target."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .citest import is_independent, partial_correlation
from .dataset import is_target_code
from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

FORCED, ALLOWED, FORBIDDEN = "forced", "allowed", "forbidden"
WITH_ASSUMPS, NO_ASSUMPS = "withASSUMPS", "noASSUMPS"


@dataclass(frozen=True)
class LinkAssumptions:
    status: dict = field(default_factory=dict)
    default: str = ALLOWED

    def __post_init__(self):
        for k, v in self.status.items():
            if v not in (FORCED, ALLOWED, FORBIDDEN):
                raise ValidationError(f"bad link status {v!r} for {k}")

    @classmethod
    def forcing(cls, codes, lags, forbidden=()):
        """Force every ``(code, lag)`` for the given codes and lags."""
        status = {(c, int(l)): FORCED for c in codes for l in lags}
        status.update({(c, int(l)): FORBIDDEN for c in forbidden for l in lags})
        return cls(status)

    def __call__(self, link):
        return self.status.get(link, self.default)

    @property
    def forced(self):
        return sorted(k for k, v in self.status.items() if v == FORCED)


@dataclass(frozen=True)
class SelectedFeatureSet:
    members: tuple  # ((code, lag, strength), ...) in canonical order
    pc_alpha: float
    mode: str = NO_ASSUMPS
    fold: int = -1

    @property
    def features(self):
        return [(c, l) for c, l, _ in self.members]

    def __len__(self):
        return len(self.members)

    def strengths(self):
        return {(c, l): s for c, l, s in self.members}

    def to_text(self):
        lines = [f"# pc_alpha={self.pc_alpha!r}", f"# mode={self.mode}", f"# fold={self.fold}",
                 "predictor,lag,strength"]
        lines += [f"{c},{l},{s!r}" for c, l, s in self.members]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        meta, members = {}, []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v.strip()
                continue
            if line == "predictor,lag,strength":
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(f"bad feature-set line {line!r}")
            members.append((parts[0], int(parts[1]), float(parts[2])))
        try:
            return cls(tuple(members), float(meta["pc_alpha"]), meta.get("mode", NO_ASSUMPS),
                       int(meta.get("fold", -1)))
        except KeyError:
            raise ParseError("feature-set header lacks pc_alpha") from None

    def write(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def read(cls, path):
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def candidate_links(codes, target, lag_min, lag_max, assumptions=None, include_target_lags=True):
    """Canonically ordered (code, lag) candidates inside the lag window."""
    assumptions = assumptions or LinkAssumptions()
    out = set()
    for code in codes:
        if code == target and not include_target_lags:
            continue
        for lag in range(int(lag_min), int(lag_max) + 1):
            if code == target and lag == 0:
                continue
            if assumptions((code, lag)) != FORBIDDEN:
                out.add((code, lag))
    out.update(k for k in assumptions.forced if k[0] in codes)
    return sorted(out)


class _Tester:
    """Builds pooled lag columns on demand and memoises CI results."""

    def __init__(self, panel, target, storm_ids, cache=None):
        vals = panel.values if storm_ids is None else panel.values[panel.storm_index(storm_ids)]
        self.vals = vals
        self.codes = {c: j for j, c in enumerate(panel.codes)}
        self.y = vals[:, :, self.codes[target]].ravel()
        self.keep = ~np.isnan(self.y)
        self.y = self.y[self.keep]
        self._cols = {}
        self.cache = {} if cache is None else cache

    def column(self, link):
        col = self._cols.get(link)
        if col is None:
            code, lag = link
            S, L, _ = self.vals.shape
            arr = np.full((S, L), np.nan)
            if lag < L:
                arr[:, lag:] = self.vals[:, : L - lag, self.codes[code]]
            col = arr.ravel()[self.keep]
            self._cols[link] = col
        return col

    def __call__(self, link, cond):
        key = (link, tuple(cond))
        res = self.cache.get(key)
        if res is None:
            cols = [self.column(link), self.y, *(self.column(c) for c in cond)]
            M = np.column_stack(cols)
            M = M[~np.isnan(M).any(axis=1)]
            res = partial_correlation(M, len(cond))
            self.cache[key] = res
        return res


def _strength(res):
    return 0.0 if not res.testable else abs(res.r)


def mpc_select(panel, target, lag_min, lag_max, pc_alpha, assumptions=None,
               max_cond_size=3, train_ids=None, predictors=None,
               include_target_lags=True, mode=None, fold=-1, _cache=None):
    """PC-stable parent selection for ``target`` over lagged candidates.

    At level 0 every candidate is tested unconditionally. At level ``p`` each
    non-forced survivor is tested once, conditioning on the ``p`` other
    survivors with the largest ``|r|`` from the previous level; removals take
    effect only after the whole level. ``max_cond_size=None`` means unbounded.
    """
    if not 0.0 < pc_alpha < 1.0:
        raise ValidationError("pc_alpha must lie in (0, 1)")
    if not 0 <= lag_min <= lag_max < panel.length:
        raise ValidationError(f"lag window [{lag_min}, {lag_max}] invalid for panel length {panel.length}")
    if target not in panel.codes:
        raise ValidationError(f"target {target} not in panel")
    assumptions = assumptions or LinkAssumptions()
    if mode is None:
        mode = WITH_ASSUMPS if assumptions.forced else NO_ASSUMPS
    if predictors is None:
        # other intensity-change targets would leak future VMAX
        codes = [c for c in panel.codes if not is_target_code(c) or c == target]
    else:
        keep = set(predictors)
        codes = [c for c in panel.codes if c in keep or c == target]
    cands = candidate_links(codes, target, lag_min, lag_max, assumptions, include_target_lags)
    if not cands:
        return SelectedFeatureSet((), pc_alpha, mode, fold)
    forced = {c for c in cands if assumptions(c) == FORCED}
    test = _Tester(panel, target, train_ids, _cache)

    strength, survivors = {}, []
    for c in cands:
        res = test(c, ())
        strength[c] = _strength(res)
        if c in forced or not is_independent(res, pc_alpha):
            survivors.append(c)

    p = 1
    while (max_cond_size is None or p <= max_cond_size) and p <= len(survivors) - 1:
        ranked = sorted(survivors, key=lambda c: (-strength[c], c))
        updates, removed = {}, set()
        for c in survivors:
            if c in forced:
                continue
            cond = [o for o in ranked if o != c][:p]
            res = test(c, cond)
            updates[c] = _strength(res)
            if is_independent(res, pc_alpha):
                removed.add(c)
        strength.update(updates)
        survivors = [c for c in survivors if c not in removed]
        if not updates:
            break
        p += 1

    members = tuple((c, l, float(strength[(c, l)])) for c, l in survivors)
    return SelectedFeatureSet(members, float(pc_alpha), mode, fold)


def sweep_alpha(panel, target, alphas, lag_min, lag_max, **kwargs):
    """One independent :func:`mpc_select` per alpha (CI results are shared)."""
    if not alphas:
        raise ValidationError("alphas must be non-empty")
    cache = {}
    out = []
    for a in alphas:
        fs = mpc_select(panel, target, lag_min, lag_max, a, _cache=cache, **kwargs)
        log.info("pc_alpha=%g: %d features", a, len(fs))
        out.append(fs)
    return out


def abacus(sets, labels=None):
    """Presence matrix: ``{(code, lag): [bool per set]}`` in canonical order."""
    feats = sorted({f for s in sets for f in s.features})
    present = [set(s.features) for s in sets]
    return {f: [f in p for p in present] for f in feats}
