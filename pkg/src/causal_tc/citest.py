"""Linear partial-correlation conditional independence test on pooled storms."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr

from .dataset import design_rows
from .errors import ValidationError

log = logging.getLogger(__name__)

DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class CITestResult:
    r: float
    stat: float
    p_value: float
    n_effective: int
    cond_size: int
    testable: bool = True
    degenerate: bool = False

    @property
    def df(self):
        return self.n_effective - 2 - self.cond_size


def pooled_samples(panel, x, y, cond=(), storm_ids=None):
    """Rows ``(x, y, cond...)`` gathered over storms, listwise complete.

    ``x`` and every ``cond`` entry are ``(code, lag)`` pairs; ``y`` is the
    target code taken at lag 0. Returns an (n, 2 + len(cond)) array, which may
    have zero rows.
    """
    if storm_ids is not None and len(storm_ids) == 0:
        raise ValidationError("storm subset is empty")
    for _, lag in [x, *cond]:
        if not 0 <= int(lag) < panel.length:
            raise ValidationError(f"lag {lag} outside panel length {panel.length}")
    X, yv = design_rows(panel, [x, *cond], y, storm_ids)
    return np.column_stack([X[:, :1], yv, X[:, 1:]])


def _residualize(Z, v):
    coef, *_ = np.linalg.lstsq(Z, v, rcond=None)
    return v - Z @ coef


def partial_correlation(samples, cond_size=None):
    """Partial correlation of columns 0 and 1 given the remaining columns.

    Both variables are regressed on the conditioning block plus an intercept;
    ``r`` is the correlation of the residuals and the p-value is the two-sided
    Student-t tail with ``n - 2 - cond_size`` degrees of freedom.
    """
    samples = np.asarray(samples, float)
    n = samples.shape[0]
    k = samples.shape[1] - 2 if cond_size is None else int(cond_size)
    if n < k + 3:
        return CITestResult(math.nan, math.nan, math.nan, n, k, testable=False)
    x, y = samples[:, 0], samples[:, 1]
    Z = np.column_stack([np.ones(n), samples[:, 2:2 + k]])
    rx = _residualize(Z, x)
    ry = _residualize(Z, y)
    sxx, syy = rx @ rx, ry @ ry
    vx = np.sum((x - x.mean()) ** 2)
    vy = np.sum((y - y.mean()) ** 2)
    if sxx <= DEGENERATE_TOL * vx or syy <= DEGENERATE_TOL * vy or sxx == 0.0 or syy == 0.0:
        # one side is fully explained by the conditioning block
        return CITestResult(math.nan, math.nan, math.nan, n, k, testable=False, degenerate=True)
    r = float(np.clip((rx @ ry) / math.sqrt(sxx * syy), -1.0, 1.0))
    df = n - 2 - k
    if 1.0 - r * r < DEGENERATE_TOL:
        r = math.copysign(1.0, r)
        return CITestResult(r, math.copysign(math.inf, r), 0.0, n, k, degenerate=True)
    stat = r * math.sqrt(df / (1.0 - r * r))
    p = float(min(1.0, 2.0 * stdtr(df, -abs(stat))))
    return CITestResult(r, stat, p, n, k)


def is_independent(result, pc_alpha):
    """True when the link should be removed (``p > pc_alpha`` or untestable)."""
    if not 0.0 < pc_alpha < 1.0:
        raise ValidationError("pc_alpha must lie in (0, 1)")
    if not result.testable:
        log.warning("untestable CI result (n=%d, cond=%d); treating as independent",
                    result.n_effective, result.cond_size)
        return True
    return result.p_value > pc_alpha
