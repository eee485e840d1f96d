"""Storm ingestion, intensity-change targets, life-cycle alignment and folds.

Time is counted in 6-hour steps throughout. Missing values are NaN; the
boolean mask of a panel is simply ``~isnan(values)``.
"""
from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

STEP_HOURS = 6
LEAD_HOURS = (24, 48, 72, 96, 120)
VMAX, MSLP = "VMAX", "PMIN"

# Operational SHIPS developmental predictors.
SHIPS_PREDICTORS = (
    "PMIN", "VMAX", "PER", "VPER", "PC20", "SPDX", "PSLV", "SST", "POT",
    "SHDC", "T200", "T250", "EPOS", "RHMD", "TWAT", "Z850", "D200", "LHRD",
    "VSHR", "POT2", "SHGC", "SDIR", "TADV", "G200", "LAT",
)
# Causally selected additions (SHIPS+).
SHIPS_PLUS_ADDED = ("SHL0", "SHMD", "SHL1", "R000", "R001", "PVOR")

Feature = tuple  # (code, lag)


def feature_label(f):
    """``"CODE@LAG"`` for a (code, lag) pair; strings pass through."""
    return f if isinstance(f, str) else f"{f[0]}@{int(f[1])}"


def parse_feature_label(label):
    code, sep, lag = label.rpartition("@")
    if not sep:
        return label
    return (code, int(lag))


def target_code(lead_hours):
    return f"DELV{int(lead_hours)}"


def is_target_code(code):
    return re.fullmatch(r"DELV\d+", code) is not None


@dataclass(frozen=True)
class StormSeries:
    storm_id: str
    time: np.ndarray
    columns: dict

    def __post_init__(self):
        n = len(self.time)
        for code, col in self.columns.items():
            if len(col) != n:
                raise ValidationError(
                    f"{self.storm_id}: column {code} has length {len(col)}, expected {n}")
        if n > 1 and np.any(np.diff(self.time) != 1):
            bad = int(np.nonzero(np.diff(self.time) != 1)[0][0]) + 2
            raise ValidationError(f"{self.storm_id}: non-contiguous time at row {bad}")
        for code in (VMAX, MSLP):
            col = self.columns.get(code)
            if col is not None and np.any(np.isinf(col)):
                raise ValidationError(f"{self.storm_id}: {code} has non-finite values")

    def __len__(self):
        return len(self.time)

    @property
    def codes(self):
        return list(self.columns)

    @property
    def vmax(self):
        return self.columns.get(VMAX)

    @property
    def mslp(self):
        return self.columns.get(MSLP)

    def mask(self, code):
        return ~np.isnan(self.columns[code])

    def shifted(self, steps):
        return replace(self, time=self.time + steps)


def _parse_cell(cell, row, col_name):
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"row {row}: non-numeric value {cell!r} in column {col_name}") from None


def load_storm_csv(path, storm_id=None):
    """Read one storm file: header ``time,<code>,...``; empty cell = missing."""
    path = Path(path)
    if storm_id is None:
        storm_id = path.stem
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "time":
        raise ParseError(f"{path}: header must start with 'time'")
    codes = header[1:]
    seen = set()
    for c in codes:
        if c in seen:
            raise ValidationError(f"{path}: duplicate predictor code {c}")
        seen.add(c)
    times, data = [], []
    for i, row in enumerate(rows[1:], start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(
                f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        t = _parse_cell(row[0], i, "time")
        if math.isnan(t) or t != int(t):
            raise ParseError(f"{path}: row {i}: time must be an integer")
        if times and int(t) != times[-1] + 1:
            raise ValidationError(f"{path}: non-contiguous time at row {i}")
        times.append(int(t))
        data.append([_parse_cell(c, i, codes[j]) for j, c in enumerate(row[1:])])
    arr = np.array(data, dtype=float).reshape(len(times), len(codes))
    columns = {c: arr[:, j].copy() for j, c in enumerate(codes)}
    return StormSeries(storm_id, np.array(times, dtype=np.int64), columns)


def write_storm_csv(series, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *series.codes])
        cols = [series.columns[c] for c in series.codes]
        for i, t in enumerate(series.time):
            w.writerow([int(t), *("" if np.isnan(c[i]) else repr(float(c[i])) for c in cols)])


@dataclass(frozen=True)
class ManifestEntry:
    storm_id: str
    path: Path
    role: str


def load_manifest(path):
    """Parse ``storm_id,path,role`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    base = path.parent
    entries, ids = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise ParseError(f"{path}: line {lineno}: expected storm_id,path,role")
            sid, p, role = parts
            if role not in ("train", "test"):
                raise ValidationError(f"{path}: line {lineno}: role must be train or test, got {role!r}")
            if sid in ids:
                raise ValidationError(f"{path}: line {lineno}: duplicate storm id {sid}")
            ids.add(sid)
            fp = Path(p)
            entries.append(ManifestEntry(sid, fp if fp.is_absolute() else base / fp, role))
    return entries


def write_manifest(entries, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(f"{e.storm_id},{e.path},{e.role}\n")


def build_target(series, lead_hours):
    """Intensity change ``vmax[t + lead] - vmax[t]``; NaN past the series end."""
    if lead_hours % STEP_HOURS:
        raise ValidationError(f"lead_hours must be a multiple of {STEP_HOURS}")
    vmax = series.vmax if isinstance(series, StormSeries) else np.asarray(series, float)
    if vmax is None:
        raise ValidationError(f"{series.storm_id}: no {VMAX} column")
    return _delta(vmax, lead_hours // STEP_HOURS)


def _delta(v, k):
    out = np.full(v.shape, np.nan)
    if k < v.shape[-1]:
        out[..., : v.shape[-1] - k] = v[..., k:] - v[..., : v.shape[-1] - k]
    return out


# --------------------------------------------------------------------- panel


@dataclass(frozen=True)
class AlignedPanel:
    """Storms on a shared index; ``values`` has shape (storms, steps, codes)."""

    storm_ids: tuple
    codes: tuple
    values: np.ndarray
    anchor_index: int = 0
    offsets: np.ndarray = None
    standardization: dict = field(default_factory=dict)
    target_code: str | None = None
    rejected: tuple = ()

    def __post_init__(self):
        if self.values.shape[:1] != (len(self.storm_ids),) or self.values.shape[2] != len(self.codes):
            raise ValidationError("panel values shape does not match ids/codes")
        if self.offsets is None:
            object.__setattr__(self, "offsets", np.zeros(len(self.storm_ids), dtype=np.int64))

    @property
    def length(self):
        return self.values.shape[1]

    @property
    def mask(self):
        return ~np.isnan(self.values)

    def col(self, code):
        try:
            return self.values[:, :, self.codes.index(code)]
        except ValueError:
            raise KeyError(code) from None

    def storm_index(self, ids):
        lookup = {s: i for i, s in enumerate(self.storm_ids)}
        try:
            return np.array([lookup[s] for s in ids], dtype=np.int64)
        except KeyError as e:
            raise ValidationError(f"unknown storm id {e.args[0]}") from None

    def subset(self, ids):
        idx = self.storm_index(ids)
        return replace(self, storm_ids=tuple(self.storm_ids[i] for i in idx),
                       values=self.values[idx], offsets=self.offsets[idx])

    def with_columns(self, new):
        """Return a panel with extra/replaced (S, L) columns."""
        codes = list(self.codes)
        vals = self.values
        for code, arr in new.items():
            arr = np.asarray(arr, float)[:, :, None]
            if code in codes:
                vals = vals.copy()
                vals[:, :, codes.index(code)] = arr[:, :, 0]
            else:
                codes.append(code)
                vals = np.concatenate([vals, arr], axis=2)
        return replace(self, codes=tuple(codes), values=vals)

    def drop_columns(self, drop):
        keep = [i for i, c in enumerate(self.codes) if c not in set(drop)]
        return replace(self, codes=tuple(self.codes[i] for i in keep),
                       values=self.values[:, :, keep],
                       standardization={k: v for k, v in self.standardization.items() if k not in set(drop)})

    def with_target(self, lead_hours=None, code=None):
        """Attach ``DELV<lead>`` (built from VMAX) or an existing column as the target."""
        if code is None:
            code = target_code(lead_hours)
        p = self
        if code not in self.codes:
            m = re.fullmatch(r"DELV(\d+)", code)
            if not m:
                raise ValidationError(f"unknown target column {code}")
            p = self.with_columns({code: _delta(self.col(VMAX), int(m.group(1)) // STEP_HOURS)})
        return replace(p, target_code=code)

    def storm_series(self, i):
        """Unpadded StormSeries for storm ``i`` (padding trimmed)."""
        obs = np.any(self.mask[i], axis=1)
        if not obs.any():
            lo, hi = 0, 0
        else:
            nz = np.nonzero(obs)[0]
            lo, hi = nz[0], nz[-1] + 1
        cols = {c: self.values[i, lo:hi, j].copy() for j, c in enumerate(self.codes)}
        return StormSeries(self.storm_ids[i], np.arange(lo, hi, dtype=np.int64) - self.anchor_index, cols)


def panel_from_storms(storms, codes=None, length=None, offsets=None, anchor_index=0):
    """Stack storms into a panel (no shifting unless ``offsets`` given)."""
    if codes is None:
        codes = []
        for s in storms:
            codes.extend(c for c in s.codes if c not in codes)
    if offsets is None:
        offsets = np.zeros(len(storms), dtype=np.int64)
    if length is None:
        length = max((int(o) + len(s) for s, o in zip(storms, offsets)), default=0)
    vals = np.full((len(storms), length, len(codes)), np.nan)
    for i, (s, o) in enumerate(zip(storms, offsets)):
        for j, c in enumerate(codes):
            if c in s.columns:
                vals[i, o:o + len(s), j] = s.columns[c]
    return AlignedPanel(tuple(s.storm_id for s in storms), tuple(codes), vals,
                        anchor_index=anchor_index, offsets=np.asarray(offsets, dtype=np.int64))


def gaussian_smooth(x, sigma, truncate=4.0):
    """Missing-aware Gaussian filter: weights renormalised over observed neighbours."""
    x = np.asarray(x, float)
    radius = int(truncate * sigma + 0.5)
    k = np.arange(-radius, radius + 1)
    w = np.exp(-0.5 * (k / sigma) ** 2)
    obs = ~np.isnan(x)
    # full convolution then centre slice: "same" mode breaks when the kernel is longer than x
    sl = slice(radius, radius + len(x))
    num = np.convolve(np.where(obs, x, 0.0), w)[sl]
    den = np.convolve(obs.astype(float), w)[sl]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    out[den == 0] = np.nan
    return out


def mslp_anchor(mslp, sigma_steps=3.0):
    """Earliest argmin of the smoothed MSLP over observed steps, or None."""
    mslp = np.asarray(mslp, float)
    obs = ~np.isnan(mslp)
    if not obs.any():
        return None
    sm = gaussian_smooth(mslp, sigma_steps)
    sm = np.where(obs, sm, np.inf)
    return int(np.argmin(sm))


def align_by_mslp_minimum(storms, sigma_steps=3.0):
    """Shift storms so that their smoothed-MSLP minima share one panel index."""
    if sigma_steps <= 0:
        raise ValidationError("sigma_steps must be positive")
    kept, anchors, rejected = [], [], []
    for s in storms:
        a = mslp_anchor(s.mslp, sigma_steps) if s.mslp is not None else None
        if a is None:
            log.warning("storm %s rejected: no observed %s", s.storm_id, MSLP)
            rejected.append(s.storm_id)
            continue
        kept.append(s)
        anchors.append(a)
    if not kept:
        raise ValidationError(f"no storm has an observed {MSLP} series (rejected: {', '.join(rejected)})")
    anchor = max(anchors)
    offsets = np.array([anchor - a for a in anchors], dtype=np.int64)
    panel = panel_from_storms(kept, offsets=offsets, anchor_index=anchor)
    return replace(panel, rejected=tuple(rejected))


def standardize(panel, training_ids, exclude=None):
    """Z-score every column with pooled training statistics (population std).

    Target columns (``DELV*`` and ``panel.target_code``) are left untouched
    unless ``exclude`` is given explicitly. Constant or under-observed
    columns are dropped with a warning.
    """
    if exclude is None:
        exclude = {c for c in panel.codes if is_target_code(c)}
        if panel.target_code:
            exclude.add(panel.target_code)
    exclude = set(exclude)
    train = panel.values[panel.storm_index(training_ids)]
    vals = panel.values.copy()
    stats, drop = {}, []
    for j, c in enumerate(panel.codes):
        if c in exclude:
            continue
        x = train[:, :, j]
        x = x[~np.isnan(x)]
        if x.size < 2:
            log.warning("dropping %s: fewer than 2 observed training values", c)
            drop.append(c)
            continue
        mu = float(np.mean(x))
        sd = float(np.sqrt(np.mean((x - mu) ** 2)))
        if not sd > 1e-12 * max(1.0, abs(mu)):
            log.warning("dropping %s: zero variance over training storms", c)
            drop.append(c)
            continue
        stats[c] = (mu, sd)
        vals[:, :, j] = (vals[:, :, j] - mu) / sd
    out = replace(panel, values=vals, standardization={**panel.standardization, **stats})
    return out.drop_columns(drop) if drop else out


def apply_standardization(panel, stats):
    """Transform a raw panel with previously computed statistics."""
    cols = {c: (panel.col(c) - mu) / sd for c, (mu, sd) in stats.items() if c in panel.codes}
    return replace(panel.with_columns(cols), standardization=dict(stats))


def destandardize(panel):
    cols = {c: panel.col(c) * sd + mu for c, (mu, sd) in panel.standardization.items()}
    return replace(panel.with_columns(cols), standardization={})


# --------------------------------------------------------------------- folds


@dataclass(frozen=True)
class FoldSpec:
    k: int
    assignments: dict
    test_ids: tuple = ()

    def fold_ids(self, fold):
        return [s for s, f in self.assignments.items() if f == fold]

    def train_ids(self, fold):
        return [s for s, f in self.assignments.items() if f != fold]

    def all_train_ids(self):
        return list(self.assignments)


def make_folds(storm_ids, k, seed, test_ids=()):
    """Seeded shuffle followed by round-robin assignment to ``k`` folds."""
    test = set(test_ids)
    ids = [s for s in storm_ids if s not in test]
    if k < 2:
        raise ValidationError("k must be at least 2")
    if k > len(ids):
        raise ValidationError(f"k={k} exceeds the number of training storms ({len(ids)})")
    perm = np.random.default_rng(seed).permutation(len(ids))
    assignments = {ids[j]: i % k for i, j in enumerate(perm)}
    # keep the caller's id order for readability
    assignments = {s: assignments[s] for s in ids}
    return FoldSpec(k, assignments, tuple(s for s in storm_ids if s in test))


_YEAR = re.compile(r"(19|20)\d{2}")


def default_test_ids(storm_ids, years=(2020, 2021), extra=(("WILMA", 2005),)):
    """Ids whose embedded year is in ``years``, plus named storms like Wilma 2005."""
    out = []
    for s in storm_ids:
        m = _YEAR.search(s)
        if not m:
            continue
        year = int(m.group(0))
        if year in years or any(name in s.upper() and year == y for name, y in extra):
            out.append(s)
    return out


# ------------------------------------------------------------- sample gather


def lagged_block(panel, features, storm_ids=None):
    """Stack lagged columns: result[s, t, i] = values[s, t - lag_i, code_i]."""
    vals = panel.values if storm_ids is None else panel.values[panel.storm_index(storm_ids)]
    S, L, _ = vals.shape
    out = np.full((S, L, len(features)), np.nan)
    for i, (code, lag) in enumerate(features):
        j = panel.codes.index(code)
        lag = int(lag)
        if lag < L:
            out[:, lag:, i] = vals[:, : L - lag, j]
    return out


def design_rows(panel, features, target=None, storm_ids=None, return_index=False):
    """Complete-case rows of lagged features (and target at lag 0).

    Returns ``X`` (n, len(features)) and ``y`` (n,) when ``target`` is given;
    with ``return_index`` also an (n, 2) array of (storm position, step).
    """
    feats = list(features)
    if target is not None:
        feats = feats + [(target, 0)]
    block = lagged_block(panel, feats, storm_ids)
    ok = ~np.isnan(block).any(axis=2)
    s_idx, t_idx = np.nonzero(ok)
    rows = block[s_idx, t_idx]
    if target is not None:
        X, y = rows[:, :-1], rows[:, -1]
    else:
        X, y = rows, None
    out = (X, y)
    if return_index:
        out = out + (np.column_stack([s_idx, t_idx]),)
    return out
