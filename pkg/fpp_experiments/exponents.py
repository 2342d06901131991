# fpp_experiments/exponents.py
"""
Scaling diagnostics on the horizontal axis:

    chi       Var T(0, (n, 0))                  exponent = slope / 2
    xi        mean max |y| along Geo(0, (n, 0))  exponent = slope
    midpoint  P(0 in Geo(-n e1, n e1))           exponent = -slope
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from fpp_core.errors import DegenerateInputError, FitError
from fpp_core.lattice import Vertex, Window
from fpp_core.metric import shortest_path_tree
from fpp_core.weights import EdgeWeightField, WeightDistribution

from .midpoint import midpoint_hits
from .runner import run_trials
from .shape import ORIGIN, policy_half_width
from .stats import LogLogFit, loglog_fit, mean_se

logger = logging.getLogger(__name__)

Observable = Literal["chi", "xi", "midpoint"]
_SCALE = {"chi": 0.5, "xi": 1.0, "midpoint": -1.0}


@dataclass(frozen=True)
class ExponentFit:
    observable: str
    sizes: Tuple[int, ...]
    statistic: Tuple[float, ...]
    statistic_se: Tuple[float, ...]
    slope: float
    slope_se: float
    intercept: float
    residuals: Tuple[float, ...]
    degenerate: bool

    @property
    def exponent(self) -> float:
        return _SCALE[self.observable] * self.slope

    def to_frame(self) -> pd.DataFrame:
        resid = self.residuals or tuple(math.nan for _ in self.sizes)
        rows = [
            {"observable": self.observable, "n": n, "statistic": s, "se": e, "residual": r,
             "slope": self.slope, "slope_se": self.slope_se, "exponent": self.exponent}
            for n, s, e, r in zip(self.sizes, self.statistic, self.statistic_se, resid)
        ]
        return pd.DataFrame(rows, columns=["observable", "n", "statistic", "se", "residual", "slope", "slope_se", "exponent"])


def fit_power_law(sizes: Sequence[float], values: Sequence[float]) -> LogLogFit:
    return loglog_fit(sizes, values)


def _axis_samples(distribution: WeightDistribution, sizes: Tuple[int, ...], window: Window):
    targets = [Vertex(n, 0) for n in sizes]

    def task(seed: int) -> Tuple[Tuple[float, ...], Tuple[int, ...]]:
        tree = shortest_path_tree(EdgeWeightField(seed, distribution), ORIGIN, window)
        times = tuple(tree.distance(t) for t in targets)
        wander = tuple(max(abs(v.y) for v in tree.path_to(t)) for t in targets)
        return times, wander

    return task


def exponent_fit(
    distribution: WeightDistribution,
    observable: Observable,
    sizes: Sequence[int],
    trials: int,
    master_seed: int,
    threads: int = 1,
    window: Optional[int] = None,
    progress: bool = False,
) -> ExponentFit:
    sizes = tuple(sorted(int(n) for n in sizes))
    if len(sizes) < 3:
        raise FitError(f"exponent fit needs at least 3 sizes, got {len(sizes)}")
    if observable not in _SCALE:
        raise ValueError(f"unknown observable {observable!r}")

    if observable == "midpoint":
        hits = midpoint_hits(distribution, sizes, trials, master_seed, threads, window, progress)
        stat = hits.mean(axis=0)
        err = np.sqrt(stat * (1 - stat) / max(trials, 1))
    else:
        half = policy_half_width(sizes[-1], window)
        task = _axis_samples(distribution, sizes, Window(ORIGIN, half))
        batch = run_trials(master_seed, trials, task, threads, progress, desc=observable)
        if observable == "chi":
            times = np.array([o[0] for o in batch.outcomes], dtype=np.float64).reshape(trials, len(sizes))
            stat = times.var(axis=0, ddof=1) if trials > 1 else np.full(len(sizes), math.nan)
            # normal-theory standard error of a sample variance
            err = stat * math.sqrt(2.0 / (trials - 1)) if trials > 1 else np.full(len(sizes), math.nan)
        else:
            wander = np.array([o[1] for o in batch.outcomes], dtype=np.float64).reshape(trials, len(sizes))
            pairs = [mean_se(wander[:, j]) for j in range(len(sizes))]
            stat = np.array([p[0] for p in pairs])
            err = np.array([p[1] for p in pairs])

    stat_t = tuple(float(v) for v in stat)
    err_t = tuple(float(v) for v in err)
    try:
        fit = fit_power_law(sizes, stat_t)
    except DegenerateInputError:
        logger.warning("%s statistic not positive at every size; slope undefined", observable)
        return ExponentFit(observable, sizes, stat_t, err_t, math.nan, math.nan, math.nan, (), True)
    logger.info("%s: slope %.4f +- %.4f", observable, fit.slope, fit.slope_se)
    return ExponentFit(observable, sizes, stat_t, err_t, fit.slope, fit.slope_se, fit.intercept, fit.residuals, False)
