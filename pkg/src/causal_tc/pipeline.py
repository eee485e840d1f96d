"""Experiment orchestration: per-fold sweeps, shortlist aggregation and screening."""
from __future__ import annotations

import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import stdtrit

from .baselines import ForestConfig, rank_by_correlation, rank_by_forest_importance, top_k_sets
from .config import DEFAULT_ALPHAS, METHODS, derive_seed
from .dataset import (SHIPS_PREDICTORS, align_by_mslp_minimum, default_test_ids, design_rows,
                      feature_label, is_target_code, load_manifest, load_storm_csv, make_folds,
                      panel_from_storms, standardize)
from .dataset import standardize as _standardize
from .discovery import (FORCED, NO_ASSUMPS, WITH_ASSUMPS, LinkAssumptions, abacus,
                        candidate_links, sweep_alpha)
from .errors import RankDeficientError, ValidationError
from .regression import MlpConfig, evaluate, fit_mlp, fit_mlr

log = logging.getLogger(__name__)

METRIC_FIELDS = ("r2", "pcc", "mae", "n")


def _num(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _sort_key(v):
    return v if isinstance(v, float) and math.isfinite(v) else -math.inf


# ------------------------------------------------------------------ folds


@dataclass(frozen=True)
class FoldEntry:
    param: object          # pc_alpha (causal), k (baselines) or None (none)
    features: tuple
    train: object = None   # Metrics or None
    val: object = None
    test: object = None
    flag: str = ""

    @property
    def usable(self):
        return self.val is not None and not self.flag


@dataclass(frozen=True)
class FoldReport:
    fold: int
    method: str
    mode: str
    target: str
    regressor: str
    entries: tuple
    best_entry: int = -1
    selections: tuple = ()   # SelectedFeatureSet per alpha (causal only)
    model: object = field(default=None, compare=False, repr=False)

    @property
    def best(self):
        return self.entries[self.best_entry] if self.best_entry >= 0 else None

    def rows(self):
        """One dict per entry with flattened metrics."""
        out = []
        for i, e in enumerate(self.entries):
            row = {"target": self.target, "method": self.method, "mode": self.mode,
                   "regressor": self.regressor, "fold": str(self.fold), "entry": str(i),
                   "param": "" if e.param is None else _num(e.param),
                   "n_features": str(len(e.features)),
                   "features": ";".join(feature_label(f) for f in e.features)}
            for split in ("train", "val", "test"):
                m = getattr(e, split)
                for k in METRIC_FIELDS:
                    row[f"{split}_{k}"] = "" if m is None else _num(getattr(m, k))
            row["flag"] = e.flag
            row["best"] = "1" if i == self.best_entry else "0"
            out.append(row)
        return out


FOLD_REPORT_HEADER = ("target", "method", "mode", "regressor", "fold", "entry", "param",
                      "n_features", "features",
                      *(f"{s}_{k}" for s in ("train", "val", "test") for k in METRIC_FIELDS),
                      "flag", "best")


def select_best(entries):
    """Index of the best usable entry: validation R², then PCC, then fewer features."""
    best, best_key = -1, None
    for i, e in enumerate(entries):
        if not e.usable:
            continue
        key = (_sort_key(e.val.r2), _sort_key(e.val.pcc), -len(e.features))
        if best_key is None or key > best_key:
            best, best_key = i, key
    return best


def default_ks(n):
    """Every prefix size for small rankings, ~40 log-spaced sizes otherwise."""
    if n <= 60:
        return list(range(1, n + 1))
    return sorted(set(np.geomspace(1, n, 40).round().astype(int).tolist()))


def _metrics(model, X, y):
    if len(y) < 2:
        return None
    return evaluate(y, model.predict(X))


def _fit_eval(panel, feats, target, ids, regressor, mlp_cfg):
    Xtr, ytr = design_rows(panel, feats, target, ids[0])
    Xva, yva = design_rows(panel, feats, target, ids[1])
    Xte, yte = design_rows(panel, feats, target, ids[2]) if ids[2] else (None, np.empty(0))
    if len(ytr) < len(feats) + 2:
        return None, "too-few-samples", None
    try:
        if regressor == "mlr":
            model = fit_mlr(Xtr, ytr, feats, panel.standardization)
        else:
            if len(yva) == 0:
                return None, "no-validation-rows", None
            model = fit_mlp(Xtr, ytr, Xva, yva, mlp_cfg, feats, panel.standardization)
    except RankDeficientError as e:
        log.warning("skipping rank-deficient set: %s", e)
        return None, "rank-deficient", None
    ms = (_metrics(model, Xtr, ytr), _metrics(model, Xva, yva),
          _metrics(model, Xte, yte) if len(yte) else None)
    return ms, "", model


def run_fold(panel, fold_spec, fold, method, mode=NO_ASSUMPS, grid=None, regressor="mlr", *,
             target=None, lag_min=1, lag_max=1, forced=(), forced_lags=None, max_cond_size=3,
             include_target_lags=False, predictors=None, forest=None, mlp=None, seed=0,
             standardize_fold=False):
    """Sweep one fold: a feature set per grid point, a fitted regressor per set.

    ``grid`` holds pc_alpha values for ``method="causal"`` and prefix sizes
    ``k`` for the ranking baselines; ``method="none"`` ignores it and uses
    every candidate. Forced links (withASSUMPS) are part of every set.
    """
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    if mode not in (WITH_ASSUMPS, NO_ASSUMPS):
        raise ValidationError(f"unknown mode {mode!r}")
    if not 0 <= fold < fold_spec.k:
        raise ValidationError(f"fold {fold} outside 0..{fold_spec.k - 1}")
    if grid is not None and len(grid) == 0:
        raise ValidationError("grid must be non-empty")
    target = target or panel.target_code
    if target is None or target not in panel.codes:
        raise ValidationError(f"target {target!r} not in panel")
    train_ids = fold_spec.train_ids(fold)
    val_ids = fold_spec.fold_ids(fold)
    ids = (train_ids, val_ids, list(fold_spec.test_ids))
    if standardize_fold:
        panel = standardize(panel, train_ids)

    codes = _codes(panel, target, predictors)
    assumptions = _assumptions(codes, target, mode, forced, forced_lags, lag_min)
    cands = candidate_links(codes, target, lag_min, lag_max, assumptions, include_target_lags)
    forced_links = [c for c in cands if assumptions(c) == FORCED]
    free = [c for c in cands if assumptions(c) != FORCED]

    selections = ()
    if method == "causal":
        grid = list(grid or DEFAULT_ALPHAS)
        sel = sweep_alpha(panel, target, grid, lag_min, lag_max, assumptions=assumptions,
                          max_cond_size=max_cond_size, train_ids=train_ids, predictors=codes,
                          include_target_lags=include_target_lags, mode=mode, fold=fold)
        selections = tuple(sel)
        sets = [s.features for s in sel]
    elif method in ("correlation", "forest"):
        if free:
            if method == "correlation":
                ranking = rank_by_correlation(panel, target, free, train_ids)
            else:
                cfg = replace(forest or ForestConfig(),
                              seed=derive_seed(seed, "forest", target, mode, fold))
                ranking = rank_by_forest_importance(panel, target, free, train_ids, cfg)
            grid = list(grid or default_ks(len(free)))
            sets = [list(forced_links) + s for s in top_k_sets(ranking, grid)]
        else:
            grid, sets = [0], [list(forced_links)]
    else:
        grid, sets = [None], [cands]

    base_mlp = mlp or MlpConfig()
    entries, models = [], []
    for i, (param, feats) in enumerate(zip(grid, sets)):
        feats = tuple(feats)
        if not feats:
            entries.append(FoldEntry(param, feats, flag="empty-set"))
            models.append(None)
            continue
        cfg = replace(base_mlp, seed=derive_seed(seed, "mlp", target, method, mode, fold, i))
        ms, flag, model = _fit_eval(panel, list(feats), target, ids, regressor, cfg)
        if ms is None:
            entries.append(FoldEntry(param, feats, flag=flag))
        else:
            entries.append(FoldEntry(param, feats, *ms, flag=flag))
        models.append(model)
    best = select_best(entries)
    return FoldReport(fold, method, mode, target, regressor, tuple(entries), best, selections,
                      models[best] if best >= 0 else None)


def _assumptions(codes, target, mode, forced, forced_lags, lag_min):
    if mode == WITH_ASSUMPS:
        fc = [c for c in forced if c in codes and c != target]
        return LinkAssumptions.forcing(fc, forced_lags or (lag_min,))
    return LinkAssumptions()


def discover_fold(panel, fold_spec, fold, mode=NO_ASSUMPS, alphas=None, *, target=None,
                  lag_min=1, lag_max=1, forced=(), forced_lags=None, max_cond_size=3,
                  include_target_lags=False, predictors=None, standardize_fold=False, **_):
    """Alpha sweep on one fold's training storms, without fitting regressors."""
    target = target or panel.target_code
    train_ids = fold_spec.train_ids(fold)
    if standardize_fold:
        panel = standardize(panel, train_ids)
    codes = _codes(panel, target, predictors)
    assumptions = _assumptions(codes, target, mode, forced, forced_lags, lag_min)
    return tuple(sweep_alpha(panel, target, list(alphas or DEFAULT_ALPHAS), lag_min, lag_max,
                             assumptions=assumptions, max_cond_size=max_cond_size,
                             train_ids=train_ids, predictors=codes,
                             include_target_lags=include_target_lags, mode=mode, fold=fold))


def _codes(panel, target, predictors):
    if predictors is None:
        return [c for c in panel.codes if not is_target_code(c) or c == target]
    keep = set(predictors) | {target}
    return [c for c in panel.codes if c in keep]


# --------------------------------------------------------------- shortlist


@dataclass(frozen=True)
class Shortlist:
    members: tuple   # (code, lag, count); lag is the most frequent one selected
    threshold: int
    n_sets: int = 0

    @property
    def codes(self):
        return [m[0] for m in self.members]

    def to_text(self):
        lines = [f"# threshold={self.threshold}", f"# n_sets={self.n_sets}", "predictor,lag,count"]
        lines += [f"{c},{'' if l is None else l},{n}" for c, l, n in self.members]
        return "\n".join(lines) + "\n"


def _as_features(s):
    feats = s.features if hasattr(s, "features") else s
    return [(f, None) if isinstance(f, str) else (f[0], int(f[1])) for f in feats]


def aggregate_shortlist(best_sets, threshold=3, exclude=()):
    """Predictors chosen in more than ``threshold`` best sets, lags collapsed."""
    best_sets = list(best_sets)
    if not best_sets:
        raise ValidationError("need at least one best set")
    counts, lags = Counter(), {}
    for s in best_sets:
        feats = _as_features(s)
        for code in {c for c, _ in feats}:
            counts[code] += 1
        for c, l in feats:
            lags.setdefault(c, Counter())[l] += 1
    excl = set(exclude)
    members = []
    for code, n in counts.items():
        if n > threshold and code not in excl:
            lc = lags[code]
            lag = min(lc, key=lambda l: (-lc[l], -1 if l is None else l))
            members.append((code, lag, n))
    members.sort(key=lambda m: (-m[2], m[0]))
    return Shortlist(tuple(members), int(threshold), len(best_sets))


def assemble_ships_plus(base, shortlist):
    codes = shortlist.codes if hasattr(shortlist, "codes") else list(shortlist)
    out = []
    for c in [*base, *codes]:
        if c not in out:
            out.append(c)
    return out


# --------------------------------------------------------------- screening


@dataclass(frozen=True)
class CandidateScreen:
    code: str
    delta_r2: np.ndarray        # per interval, candidate added alone to the base set
    tstat: np.ndarray           # its coefficient t per interval
    significant: np.ndarray     # |t| beyond the two-sided critical value
    max_window_dr2: float
    cond1: bool
    cond2: bool
    cond3: bool = False
    flag: str = ""

    @property
    def n_significant(self):
        return int(self.significant.sum())


@dataclass(frozen=True)
class ScreeningReport:
    intervals: tuple
    base_set: tuple
    candidates: tuple          # CandidateScreen, input order
    retained: tuple
    eliminated: tuple          # backward-elimination order
    final_tstat: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)

    def header(self):
        return ["candidate", "cond1_pass", "cond2_pass", "cond3_pass", "retained",
                "max_window_dr2", "n_significant", "flag",
                *(f"dr2_{h}" for h in self.intervals), *(f"t_{h}" for h in self.intervals)]

    def rows(self):
        keep = set(self.retained)
        for c in self.candidates:
            yield [c.code, str(int(c.cond1)), str(int(c.cond2)), str(int(c.cond3)),
                   str(int(c.code in keep)), _num(c.max_window_dr2), str(c.n_significant), c.flag,
                   *map(_num, c.delta_r2), *map(_num, c.tstat)]


def _t_crit(df, sig):
    return float(stdtrit(df, 1.0 - (1.0 - sig) / 2.0)) if df > 0 else math.inf


def _r2(model, X, y):
    r = y - model.predict(X)
    d = y - y.mean()
    return 1.0 - float(r @ r) / float(d @ d)


def _kth_largest(a, k):
    s = np.sort(np.abs(a))[::-1]
    return float(s[min(k, len(s)) - 1])


def screen_predictors(panel, base_set, candidates, intervals=tuple(range(6, 169, 6)),
                      dvar=0.002, sig=0.99, runs=5, train_ids=None, lag=0, window=5):
    """Three-condition gate for adding predictors to an interval-wise MLR.

    1. Added alone to ``base_set``, the mean R² gain over some ``window``
       consecutive intervals is at least ``dvar``.
    2. Its coefficient is significant at level ``sig`` (two-sided) in at
       least ``runs`` intervals.
    3. Refit with every candidate passing 1 and 2; while any fails the rule
       of condition 2, drop the one whose ``runs``-th largest |t| is smallest.

    All intervals use the same rows: storms in ``train_ids`` with every
    base, candidate and target value present.
    """
    base_set, candidates, intervals = tuple(base_set), tuple(candidates), tuple(intervals)
    if not intervals:
        raise ValidationError("no forecast intervals given")
    missing = [c for c in (*base_set, *candidates) if c not in panel.codes]
    if missing:
        raise ValidationError(f"unknown predictor(s): {', '.join(missing)}")
    if len(set(candidates)) != len(candidates):
        raise ValidationError("duplicate candidates")
    bf = [(c, lag) for c in base_set]
    cf = {c: (c, lag) for c in candidates}
    data = {}
    for h in intervals:
        p = panel.with_target(lead_hours=h)
        X, y = design_rows(p, bf + list(cf.values()), p.target_code, train_ids)
        if len(y) < len(bf) + len(cf) + 3:
            raise ValidationError(f"too few complete rows ({len(y)}) at {h} h")
        data[h] = (X, y)
    nb = len(bf)
    col = {c: nb + i for i, c in enumerate(candidates)}

    base_r2 = {}
    for h, (X, y) in data.items():
        try:
            base_r2[h] = _r2(fit_mlr(X[:, :nb], y, bf), X[:, :nb], y)
        except RankDeficientError as e:
            raise ValidationError(f"base set is rank deficient at {h} h: {e}") from None

    w = min(window, len(intervals))
    screens = []
    for c in candidates:
        dr2, tt, sg = np.zeros(len(intervals)), np.zeros(len(intervals)), np.zeros(len(intervals), bool)
        flag = ""
        for i, h in enumerate(intervals):
            X, y = data[h]
            Xc = X[:, [*range(nb), col[c]]]
            try:
                m = fit_mlr(Xc, y, bf + [cf[c]])
            except RankDeficientError:
                flag = "rank-deficient"
                continue
            dr2[i] = _r2(m, Xc, y) - base_r2[h]
            tt[i] = m.tstat[-1]
            sg[i] = abs(tt[i]) >= _t_crit(m.df_resid, sig)
        wmeans = np.convolve(dr2, np.ones(w) / w, mode="valid")
        best_w = float(wmeans.max())
        screens.append(CandidateScreen(c, dr2, tt, sg, best_w, best_w >= dvar, int(sg.sum()) >= runs,
                                       flag=flag))

    retained = [s.code for s in screens if s.cond1 and s.cond2]
    eliminated, final_t, refit_flags = [], {}, {}
    while retained:
        tmat = np.zeros((len(retained), len(intervals)))
        smat = np.zeros_like(tmat, dtype=bool)
        dropped = None
        for i, h in enumerate(intervals):
            X, y = data[h]
            cols = [*range(nb), *(col[c] for c in retained)]
            try:
                m = fit_mlr(X[:, cols], y, bf + [cf[c] for c in retained])
            except RankDeficientError as e:
                bad = [c for c in retained if feature_label(cf[c]) in e.columns]
                dropped = bad[-1] if bad else retained[-1]
                break
            tmat[:, i] = m.tstat[nb:]
            smat[:, i] = np.abs(tmat[:, i]) >= _t_crit(m.df_resid, sig)
        if dropped is not None:
            log.warning("screening refit rank deficient; dropping %s", dropped)
            refit_flags[dropped] = "rank-deficient-refit"
            retained.remove(dropped)
            eliminated.append(dropped)
            continue
        final_t = {c: tmat[j].copy() for j, c in enumerate(retained)}
        if all(smat[j].sum() >= runs for j in range(len(retained))):
            break
        score = [(_kth_largest(tmat[j], runs), c) for j, c in enumerate(retained)]
        worst = min(score)[1]
        retained.remove(worst)
        eliminated.append(worst)
        final_t = {}
    keep = set(retained)
    screens = [replace(s, cond3=s.code in keep,
                       flag=";".join(x for x in (s.flag, refit_flags.get(s.code, "")) if x))
               for s in screens]
    return ScreeningReport(intervals, base_set, tuple(screens), tuple(retained), tuple(eliminated),
                           final_t, {"dvar": dvar, "sig": sig, "runs": runs, "window": w, "lag": lag})


# -------------------------------------------------------------- experiment


def load_panel(config, standardize=True):
    """Load the manifest's storms, align them and attach the configured targets.

    Returns ``(panel, fold_spec)``; storms with the manifest role ``test``
    form the held-out set, or the default test years when no storm has it.
    """
    if config.manifest is None:
        raise ValidationError("config has no manifest")
    entries = load_manifest(config.manifest)
    storms = [load_storm_csv(e.path, e.storm_id) for e in entries]
    if config.align:
        panel = align_by_mslp_minimum(storms, config.sigma)
    else:
        panel = panel_from_storms(storms)
    for t in config.targets:
        panel = panel.with_target(code=t)
    ids = list(panel.storm_ids)
    test = [e.storm_id for e in entries if e.role == "test" and e.storm_id in ids]
    if not any(e.role == "test" for e in entries):
        test = default_test_ids(ids)
    folds = make_folds(ids, config.folds, derive_seed(config.seed, "folds"), test)
    if standardize and config.standardize == "pool":
        panel = _standardize(panel, folds.all_train_ids())
    return panel, folds


def fold_kwargs(config):
    forced = config.forced if config.forced is not None else SHIPS_PREDICTORS
    return dict(lag_min=config.lag_min, lag_max=config.lag_max, forced=tuple(forced),
                forced_lags=config.forced_lags, max_cond_size=config.max_cond_size,
                include_target_lags=config.include_target_lags, predictors=config.predictors,
                forest=ForestConfig(config.forest_trees, config.forest_max_depth, config.forest_min_leaf),
                mlp=MlpConfig(hidden=tuple(config.mlp_hidden), max_epochs=config.mlp_max_epochs,
                              batch_size=config.mlp_batch_size, dtype=config.mlp_dtype),
                seed=config.seed, standardize_fold=config.standardize == "fold")


_WORKER = {}


def _init_worker(panel, folds, kwargs):
    _WORKER.update(panel=panel, folds=folds, kwargs=kwargs)


def _job(args):
    target, method, mode, fold, grid, regressor = args
    w = _WORKER
    if method == "discover":
        return discover_fold(w["panel"], w["folds"], fold, mode, grid, target=target, **w["kwargs"])
    return run_fold(w["panel"], w["folds"], fold, method, mode, grid, regressor,
                    target=target, **w["kwargs"])


def run_jobs(panel, folds, jobs, kwargs, n_jobs=1):
    """Run ``(target, method, mode, fold, grid, regressor)`` jobs; results keep job order.

    ``method="discover"`` runs only the alpha sweep (see :func:`discover_fold`).
    """
    jobs = list(jobs)
    if n_jobs <= 1 or len(jobs) <= 1:
        _init_worker(panel, folds, kwargs)
        try:
            return [_job(j) for j in jobs]
        finally:
            _WORKER.clear()
    with ProcessPoolExecutor(max_workers=min(n_jobs, len(jobs)), initializer=_init_worker,
                             initargs=(panel, folds, kwargs)) as ex:
        return list(ex.map(_job, jobs))


def _grid(config, method):
    if method == "causal":
        return tuple(config.alphas)
    if method in ("correlation", "forest"):
        return config.ks
    return None


@dataclass(frozen=True)
class ExperimentResult:
    reports: tuple
    shortlists: dict      # target -> Shortlist from the causal best sets
    comparison: tuple     # summary rows


COMPARISON_HEADER = ("target", "method", "mode", "regressor", "n_folds", "test_r2_median",
                     "test_r2_q1", "test_r2_q3", "val_r2_median", "n_features_median")


def summarize(reports):
    """Median and quartiles of best-entry test R² per (target, method)."""
    groups = {}
    for r in reports:
        groups.setdefault((r.target, r.method, r.mode, r.regressor), []).append(r)
    rows = []
    for (t, m, mode, reg), rs in groups.items():
        best = [r.best for r in rs if r.best is not None]
        test = [b.test.r2 for b in best if b.test is not None and b.test.r2_defined]
        val = [b.val.r2 for b in best if b.val.r2_defined]
        nf = [len(b.features) for b in best]
        q = np.percentile(test, [50, 25, 75]) if test else [math.nan] * 3
        rows.append({"target": t, "method": m, "mode": mode, "regressor": reg,
                     "n_folds": str(len(best)), "test_r2_median": _num(q[0]),
                     "test_r2_q1": _num(q[1]), "test_r2_q3": _num(q[2]),
                     "val_r2_median": _num(np.median(val) if val else math.nan),
                     "n_features_median": _num(np.median(nf) if nf else math.nan)})
    return tuple(rows)


def run_experiment(config, panel=None, folds=None, n_jobs=None):
    """Every (target, method, fold) sweep, the causal shortlists and the summary table."""
    if panel is None:
        panel, folds = load_panel(config)
    n_jobs = config.n_jobs if n_jobs is None else n_jobs
    jobs = [(t, m, config.mode, f, _grid(config, m), config.regressor)
            for t in config.targets for m in config.methods for f in range(folds.k)]
    reports = tuple(run_jobs(panel, folds, jobs, fold_kwargs(config), n_jobs))
    shortlists = {}
    for t in config.targets:
        best = [r.best.features for r in reports
                if r.target == t and r.method == "causal" and r.best is not None]
        if best:
            shortlists[t] = aggregate_shortlist(best, config.threshold, config.exclude)
    return ExperimentResult(reports, shortlists, summarize(reports))


def abacus_rows(selections_by_fold):
    """Presence rows over (fold, alpha) columns: ``(header, rows)``."""
    cols, sets = [], []
    for fold, sels in selections_by_fold:
        for s in sels:
            cols.append(f"f{fold}@{s.pc_alpha!r}")
            sets.append(s)
    ab = abacus(sets)
    header = ["predictor", "lag", *cols]
    rows = [[c, str(l), *("1" if x else "0" for x in flags)] for (c, l), flags in ab.items()]
    return header, rows
