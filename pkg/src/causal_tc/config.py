"""Plain-text ``key = value`` experiment configuration."""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .dataset import SHIPS_PREDICTORS
from .errors import ParseError, ValidationError

DEFAULT_ALPHAS = (0.00015, 0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.2, 0.4, 0.6)
METHODS = ("causal", "correlation", "forest", "none")


@dataclass(frozen=True)
class ExperimentConfig:
    manifest: Path | None = None
    output_dir: Path | None = None
    lead_hours: tuple = (24,)
    target: str | None = None
    lag_min: int = 4
    lag_max: int = 20
    alphas: tuple = DEFAULT_ALPHAS
    folds: int = 7
    seed: int = 0
    mode: str = "noASSUMPS"
    forced: tuple | None = None
    forced_lags: tuple | None = None
    regressor: str = "mlr"
    methods: tuple = METHODS
    ks: tuple | None = None
    max_cond_size: int | None = 3
    include_target_lags: bool = False
    threshold: int = 3
    exclude: tuple = SHIPS_PREDICTORS
    align: bool = True
    sigma: float = 3.0
    standardize: str = "pool"
    predictors: tuple | None = None
    forest_trees: int = 200
    forest_max_depth: int = 12
    forest_min_leaf: int = 5
    mlp_max_epochs: int = 1000
    mlp_batch_size: int | None = None
    mlp_hidden: tuple = (512, 512, 512, 512)
    mlp_dtype: str = "float64"
    jobs: int | None = None
    base_set: tuple = ()
    candidates: tuple = ()
    intervals: tuple = tuple(range(6, 169, 6))
    dvar: float = 0.002
    sig: float = 0.99
    runs: int = 5
    background: int = 300
    n_coalitions: int | None = None

    def __post_init__(self):
        if self.mode not in ("withASSUMPS", "noASSUMPS"):
            raise ValidationError(f"mode must be withASSUMPS or noASSUMPS, got {self.mode!r}")
        if self.regressor not in ("mlr", "mlp"):
            raise ValidationError(f"regressor must be mlr or mlp, got {self.regressor!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValidationError(f"unknown method(s): {', '.join(bad)}")
        if self.standardize not in ("pool", "fold"):
            raise ValidationError("standardize must be pool or fold")
        if any(not 0 < a < 1 for a in self.alphas):
            raise ValidationError("alphas must lie in (0, 1)")
        if not 0 <= self.lag_min <= self.lag_max:
            raise ValidationError("need 0 <= lag_min <= lag_max")

    @property
    def targets(self):
        if self.target:
            return (self.target,)
        return tuple(f"DELV{h}" for h in self.lead_hours)

    @property
    def n_jobs(self):
        return self.jobs if self.jobs else (os.cpu_count() or 1)


def _list(conv):
    def parse(v):
        return tuple(conv(x.strip()) for x in v.split(",") if x.strip())
    return parse


def _bool(v):
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(v)


def _opt_int(v):
    return None if v.lower() in ("none", "auto", "") else int(v)


def _opt_list(conv):
    inner = _list(conv)
    return lambda v: None if v.lower() in ("none", "auto") else inner(v)


_PARSERS = {
    "manifest": Path, "output_dir": Path, "lead_hours": _list(int), "target": str,
    "lag_min": int, "lag_max": int, "alphas": _list(float), "folds": int, "seed": int,
    "mode": str, "forced": _opt_list(str), "forced_lags": _opt_list(int), "regressor": str, "methods": _list(str),
    "ks": _opt_list(int), "max_cond_size": _opt_int, "include_target_lags": _bool,
    "threshold": int, "exclude": _list(str), "align": _bool, "sigma": float,
    "standardize": str, "predictors": _opt_list(str), "forest_trees": int,
    "forest_max_depth": int, "forest_min_leaf": int, "mlp_max_epochs": int,
    "mlp_batch_size": _opt_int, "mlp_hidden": _list(int), "mlp_dtype": str, "jobs": _opt_int,
    "base_set": _list(str), "candidates": _list(str), "intervals": _list(int),
    "dvar": float, "sig": float, "runs": int, "background": int, "n_coalitions": _opt_int,
}
assert set(_PARSERS) == {f.name for f in fields(ExperimentConfig)}


def parse_config(text, base_dir=None):
    """Parse config text; relative paths resolve against ``base_dir``."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ParseError(f"config line {lineno}: expected key = value")
        if key not in _PARSERS:
            raise ParseError(f"unknown config key: {key}")
        try:
            values[key] = _PARSERS[key](val.strip())
        except ValueError:
            raise ParseError(f"config line {lineno}: bad value for {key}: {val.strip()!r}") from None
    for k in ("manifest", "output_dir"):
        if k in values and base_dir is not None and not values[k].is_absolute():
            values[k] = Path(base_dir) / values[k]
    return ExperimentConfig(**values)


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), path.parent)


def derive_seed(root, component, *index):
    """Stable 63-bit seed from the root seed, a component name and indices."""
    key = ":".join([str(int(root)), component, *map(str, index)])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little") >> 1
