# fpp_experiments/stats.py
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import stats

from fpp_core.errors import DegenerateInputError, FitError


def mean_se(values: Sequence[float]) -> Tuple[float, float]:
    """Sample mean and standard error (ddof=1); the error is nan below two samples."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    if arr.size < 2:
        return float(arr.mean()), math.nan
    return float(arr.mean()), float(stats.sem(arr))


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> Tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    z = float(stats.norm.ppf(0.5 + confidence / 2))
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def pooled_se(p1: float, n1: int, p2: float, n2: int) -> float:
    p = (p1 * n1 + p2 * n2) / (n1 + n2)
    return math.sqrt(p * (1 - p) * (1 / n1 + 1 / n2))


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    slope_se: float
    r_value: float
    residuals: Tuple[float, ...]


def loglog_fit(xs: Sequence[float], ys: Sequence[float]) -> LogLogFit:
    """Ordinary least squares of log y on log x."""
    if len(xs) != len(ys):
        raise FitError("xs and ys differ in length")
    if len(xs) < 3:
        raise FitError(f"need at least 3 points for a log-log fit, got {len(xs)}")
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if not (np.all(x > 0) and np.all(y > 0) and np.all(np.isfinite(y))):
        raise DegenerateInputError("log-log fit needs positive finite values")
    lx, ly = np.log(x), np.log(y)
    res = stats.linregress(lx, ly)
    resid = ly - (res.intercept + res.slope * lx)
    return LogLogFit(float(res.slope), float(res.intercept), float(res.stderr), float(res.rvalue), tuple(resid.tolist()))
