# fpp_experiments/midpoint.py
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from fpp_core.errors import ConfigError, DegenerateInputError
from fpp_core.lattice import Vertex, Window
from fpp_core.metric import shortest_path_tree
from fpp_core.weights import EdgeWeightField, WeightDistribution

from .runner import run_trials
from .shape import ORIGIN, policy_half_width
from .stats import loglog_fit, pooled_se, wilson_interval

logger = logging.getLogger(__name__)


def origin_on_geodesic(field: EdgeWeightField, k: int, window: Window) -> bool:
    """Whether 0 lies on the tie-broken geodesic from (-k, 0) to (k, 0)."""
    tree = shortest_path_tree(field, Vertex(-k, 0), window)
    return tree.path_to(Vertex(k, 0)).contains(ORIGIN)


@dataclass(frozen=True)
class MidpointCurve:
    distribution: str
    radii: Tuple[int, ...]
    trials: int
    hits: Tuple[int, ...]
    p_hat: Tuple[float, ...]
    ci: Tuple[Tuple[float, float], ...]
    se: Tuple[float, ...]
    slope: float
    slope_se: float
    degenerate: bool
    decay_verified: bool

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "k": k,
                "trials": self.trials,
                "hits": h,
                "p_hat": p,
                "ci_low": lo,
                "ci_high": hi,
                "se": s,
            }
            for k, h, p, (lo, hi), s in zip(self.radii, self.hits, self.p_hat, self.ci, self.se)
        ]
        return pd.DataFrame(rows, columns=["k", "trials", "hits", "p_hat", "ci_low", "ci_high", "se"])


def strictly_decaying(p_hat: Sequence[float], trials: int, gaps: float = 1.0) -> bool:
    """Consecutive estimates drop by at least `gaps` pooled standard errors."""
    for a, b in zip(p_hat, p_hat[1:]):
        if trials <= 0 or not a - b >= gaps * pooled_se(a, trials, b, trials) or not b < a:
            return False
    return True


def midpoint_hits(
    distribution: WeightDistribution,
    radii: Sequence[int],
    trials: int,
    master_seed: int,
    threads: int = 1,
    window: Optional[int] = None,
    progress: bool = False,
) -> np.ndarray:
    """(trials, len(radii)) boolean matrix; radii share each trial's seed."""
    radii = [int(k) for k in radii]
    for k in radii:
        if k < 2:
            raise ConfigError(f"midpoint radius must be >= 2, got {k}", field="radii")
    windows = [Window(ORIGIN, policy_half_width(k, window)) for k in radii]

    def task(seed: int) -> List[bool]:
        field = EdgeWeightField(seed, distribution)
        return [origin_on_geodesic(field, k, w) for k, w in zip(radii, windows)]

    batch = run_trials(master_seed, trials, task, threads, progress, desc="midpoint")
    return np.array(batch.outcomes, dtype=bool).reshape(trials, len(radii))


def midpoint_probability(
    distribution: WeightDistribution,
    radii: Sequence[int],
    trials: int,
    master_seed: int,
    threads: int = 1,
    window: Optional[int] = None,
    progress: bool = False,
) -> MidpointCurve:
    radii = tuple(sorted(int(k) for k in radii))
    hits = midpoint_hits(distribution, radii, trials, master_seed, threads, window, progress)
    counts = tuple(int(c) for c in hits.sum(axis=0))
    p_hat = tuple(c / trials if trials else math.nan for c in counts)
    ci = tuple(wilson_interval(c, trials) for c in counts)
    se = tuple(math.sqrt(p * (1 - p) / trials) if trials else math.nan for p in p_hat)

    degenerate = not distribution.continuous
    slope = slope_se = math.nan
    if degenerate:
        logger.warning("midpoint under %s is deterministic per k; recorded as a fixture", distribution.label)
    elif len(radii) >= 3:
        try:
            fit = loglog_fit(radii, p_hat)
            slope, slope_se = fit.slope, fit.slope_se
        except DegenerateInputError:
            logger.warning("midpoint slope undefined: some p_hat is zero")
    return MidpointCurve(
        distribution=distribution.label,
        radii=radii,
        trials=trials,
        hits=counts,
        p_hat=p_hat,
        ci=ci,
        se=se,
        slope=slope,
        slope_se=slope_se,
        degenerate=degenerate,
        decay_verified=strictly_decaying(p_hat, trials),
    )
