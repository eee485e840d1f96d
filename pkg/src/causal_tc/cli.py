"""Command-line front end.

Commands: ``synth``, ``discover``, ``experiment``, ``shap`` and ``screen``.
Exit status is 0 on success, 2 for bad input or configuration and 1 for
anything else.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import (decompose_difference, kernel_shap, write_attribution_csv,
                          write_decomposition_csv)
from .config import derive_seed, load_config
from .dataset import SHIPS_PREDICTORS, design_rows, feature_label, load_manifest
from .errors import InputError, RankDeficientError, ValidationError
from .pipeline import (COMPARISON_HEADER, FOLD_REPORT_HEADER, abacus_rows, assemble_ships_plus,
                       fold_kwargs, load_panel, run_experiment, run_jobs, screen_predictors)
from .regression import load_model, save_model
from .synth import export_panel, generate_panel, load_spec

log = logging.getLogger("causal_tc")

MANIFEST_NAME = "run_manifest.json"


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_run_manifest(out, command, seed, config_path=None, inputs=()):
    """Digest every file under ``out`` (except this manifest) and the inputs."""
    out = Path(out)
    outputs = {p.relative_to(out).as_posix(): sha256(p)
               for p in sorted(out.rglob("*")) if p.is_file() and p.name != MANIFEST_NAME}
    manifest = {
        "command": command,
        "config": None if config_path is None else str(config_path),
        "seed": seed,
        "tool_version": __version__,
        "inputs": {str(p): sha256(p) for p in sorted(set(map(Path, inputs)))},
        "output_dir": str(out),
        "outputs": outputs,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return manifest


def _config(args):
    if args.config is None:
        raise ValidationError("--config is required for this command")
    cfg = load_config(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["output_dir"] = Path(args.out)
    if args.jobs is not None:
        over["jobs"] = args.jobs
    cfg = replace(cfg, **over)
    if cfg.output_dir is None:
        raise ValidationError("no output directory: set output_dir or pass --out")
    return cfg


def _input_files(cfg):
    files = [cfg.manifest]
    files += [e.path for e in load_manifest(cfg.manifest)]
    return files


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    if args.spec is None:
        raise ValidationError("synth needs --spec")
    spec, n_test = load_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out = Path(args.out or ".")
    panel, truth = generate_panel(spec)
    test_ids = panel.storm_ids[len(panel.storm_ids) - n_test:] if n_test else ()
    export_panel(panel, out, truth, test_ids)
    write_run_manifest(out, "synth", spec.seed, inputs=[args.spec])
    return 0


def _feature_set_name(fold, i):
    return f"fold{fold}_alpha{i:02d}.txt"


def cmd_discover(args):
    cfg = _config(args)
    panel, folds = load_panel(cfg)
    out = cfg.output_dir
    jobs = [(t, "discover", cfg.mode, f, tuple(cfg.alphas), None)
            for t in cfg.targets for f in range(folds.k)]
    results = run_jobs(panel, folds, jobs, fold_kwargs(cfg), cfg.n_jobs)
    for t in cfg.targets:
        per_fold = [(j[3], sels) for j, sels in zip(jobs, results) if j[0] == t]
        for fold, sels in per_fold:
            d = out / "feature_sets" / t
            d.mkdir(parents=True, exist_ok=True)
            for i, s in enumerate(sels):
                s.write(d / _feature_set_name(fold, i))
        header, rows = abacus_rows(per_fold)
        _write_csv(out / f"abacus_{t}.csv", header, rows)
    write_run_manifest(out, "discover", cfg.seed, args.config, [args.config, *_input_files(cfg)])
    return 0


def cmd_experiment(args):
    cfg = _config(args)
    panel, folds = load_panel(cfg)
    out = cfg.output_dir
    res = run_experiment(cfg, panel, folds)
    rows = [[row[k] for k in FOLD_REPORT_HEADER] for r in res.reports for row in r.rows()]
    _write_csv(out / "fold_reports.csv", FOLD_REPORT_HEADER, rows)
    _write_csv(out / "comparison.csv", COMPARISON_HEADER,
               [[r[k] for k in COMPARISON_HEADER] for r in res.comparison])
    for r in res.reports:
        if r.model is not None:
            d = out / "models"
            d.mkdir(parents=True, exist_ok=True)
            save_model(r.model, d / f"{r.target}_{r.method}_fold{r.fold}.npz")
    base = cfg.forced if cfg.forced is not None else SHIPS_PREDICTORS
    base = [c for c in base if c in panel.codes]
    for t, sl in res.shortlists.items():
        (out / f"shortlist_{t}.csv").write_text(sl.to_text(), encoding="utf-8")
        (out / f"ships_plus_{t}.txt").write_text("\n".join(assemble_ships_plus(base, sl)) + "\n",
                                                encoding="utf-8")
        per_fold = [(r.fold, r.selections) for r in res.reports if r.target == t and r.method == "causal"]
        header, arows = abacus_rows(per_fold)
        _write_csv(out / f"abacus_{t}.csv", header, arows)
    write_run_manifest(out, "experiment", cfg.seed, args.config, [args.config, *_input_files(cfg)])
    return 0


def cmd_shap(args):
    cfg = _config(args)
    if not args.model_a or not args.model_b:
        raise ValidationError("shap needs --model-a and --model-b")
    f = load_model(args.model_a)
    g = load_model(args.model_b)
    ff, fg = set(f.features), set(g.features)
    if not ff <= fg:
        raise ValidationError("model A features must be a subset of model B features; "
                              "not in B: " + ", ".join(sorted(map(feature_label, ff - fg))))
    panel, folds = load_panel(cfg)
    ids = list(folds.test_ids) or folds.all_train_ids()
    # rows usable by both models: complete over the larger feature set
    Xg, _, idx = design_rows(panel, list(g.features), None, ids, return_index=True)
    if len(Xg) == 0:
        raise ValidationError("no complete instances for the models' features")
    cols_f = [list(g.features).index(c) for c in f.features]
    Bg, _ = design_rows(panel, list(g.features), None, folds.all_train_ids())
    rng = np.random.default_rng(derive_seed(cfg.seed, "background"))
    if len(Bg) > cfg.background:
        Bg = Bg[np.sort(rng.choice(len(Bg), cfg.background, replace=False))]
    seed = derive_seed(cfg.seed, "shap")
    sa = kernel_shap(f, Bg[:, cols_f], Xg[:, cols_f], cfg.n_coalitions, seed, f.features)
    sb = kernel_shap(g, Bg, Xg, cfg.n_coalitions, seed, g.features)
    dec = decompose_difference(sa, sb)
    inst = [f"{ids[s]}:{t - panel.anchor_index}" for s, t in idx]
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_attribution_csv(sa, out / "shap_a.csv", inst)
    write_attribution_csv(sb, out / "shap_b.csv", inst)
    write_decomposition_csv(dec, out / "decomposition.csv", inst)
    write_run_manifest(out, "shap", cfg.seed, args.config,
                       [args.config, args.model_a, args.model_b, *_input_files(cfg)])
    return 0


def cmd_screen(args):
    cfg = _config(args)
    if not cfg.base_set or not cfg.candidates:
        raise ValidationError("screen needs base_set and candidates in the config")
    panel, folds = load_panel(cfg, standardize=False)
    rep = screen_predictors(panel, cfg.base_set, cfg.candidates, cfg.intervals, cfg.dvar, cfg.sig,
                            cfg.runs, train_ids=folds.all_train_ids())
    out = cfg.output_dir
    _write_csv(out / "screening.csv", rep.header(), list(rep.rows()))
    (out / "screening_retained.txt").write_text("".join(f"{c}\n" for c in rep.retained), encoding="utf-8")
    write_run_manifest(out, "screen", cfg.seed, args.config, [args.config, *_input_files(cfg)])
    return 0


COMMANDS = {"synth": cmd_synth, "discover": cmd_discover, "experiment": cmd_experiment,
            "shap": cmd_shap, "screen": cmd_screen}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value experiment config")
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="root seed (overrides config)")
    common.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="causal-tc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="simulate a panel from an SCM spec")
    s.add_argument("--spec", type=Path)
    sub.add_parser("discover", parents=[common], help="alpha sweeps and abacus per fold")
    sub.add_parser("experiment", parents=[common], help="full cross-validated comparison")
    s = sub.add_parser("shap", parents=[common], help="attributions and two-model decomposition")
    s.add_argument("--model-a", type=Path)
    s.add_argument("--model-b", type=Path)
    sub.add_parser("screen", parents=[common], help="three-condition predictor screening")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InputError, RankDeficientError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
