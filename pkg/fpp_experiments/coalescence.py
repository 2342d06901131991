# fpp_experiments/coalescence.py
"""
Where do geodesics from two nearby sources toward a common far target meet?

Sources u = (0, 0) and w = (0, s), center c = (0, s // 2), target
t = c + (R, 0). One tree rooted at t per trial gives both paths; they share
the tree path from t down to the merge vertex m and nothing after it. The
merge radius is |m - c|, capped at R.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from fpp_core.errors import ConfigError
from fpp_core.lattice import LatticePath, Vertex, Window
from fpp_core.metric import GeodesicTree, shortest_path_tree
from fpp_core.weights import EdgeWeightField, WeightDistribution

from .runner import run_trials
from .shape import policy_half_width

logger = logging.getLogger(__name__)

QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)
MAX_SEPARATION_RATIO = 8


def merge_vertex(p: LatticePath, q: LatticePath) -> Vertex:
    """Last vertex of the common prefix of two same-root paths."""
    if p.root != q.root:
        raise ValueError("paths must share their root")
    n = 0
    while n < min(len(p), len(q)) and p[n] == q[n]:
        n += 1
    return p[n - 1]


def merge_radius(tree: GeodesicTree, u: Vertex, w: Vertex, center: Vertex, cap: float) -> float:
    m = merge_vertex(tree.path_to(u), tree.path_to(w))
    return min(math.hypot(m.x - center.x, m.y - center.y), float(cap))


@dataclass(frozen=True)
class CoalescenceStats:
    distribution: str
    separations: Tuple[int, ...]
    target_radius: int
    trials: int
    radii: np.ndarray
    quantiles: Tuple[Tuple[float, ...], ...]

    @property
    def medians(self) -> Tuple[float, ...]:
        return tuple(q[QUANTILES.index(0.5)] for q in self.quantiles)

    def median_nondecreasing(self) -> bool:
        m = self.medians
        return all(b >= a for a, b in zip(m, m[1:]))

    def bounded(self) -> bool:
        return bool(np.all(self.radii <= self.target_radius))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for j, s in enumerate(self.separations):
            col = self.radii[:, j] if self.radii.size else np.zeros(0)
            row = {"separation": s, "target_radius": self.target_radius, "trials": self.trials,
                   "mean": float(col.mean()) if col.size else math.nan}
            for q, v in zip(QUANTILES, self.quantiles[j]):
                row[f"q{int(round(q * 100)):02d}"] = v
            rows.append(row)
        cols = ["separation", "target_radius", "trials", "mean"] + [f"q{int(round(q * 100)):02d}" for q in QUANTILES]
        return pd.DataFrame(rows, columns=cols)


def coalescence_study(
    distribution: WeightDistribution,
    separations: Sequence[int],
    target_radius: int,
    trials: int,
    master_seed: int,
    threads: int = 1,
    progress: bool = False,
) -> CoalescenceStats:
    seps = tuple(int(s) for s in separations)
    R = int(target_radius)
    for s in seps:
        if s < 0 or MAX_SEPARATION_RATIO * s > R:
            raise ConfigError(f"separation {s} must be in [0, R/{MAX_SEPARATION_RATIO}] for R={R}",
                              field="separations")
    half = policy_half_width(R)
    layout = []
    for s in seps:
        c = Vertex(0, s // 2)
        layout.append((Vertex(0, 0), Vertex(0, s), c, Vertex(c.x + R, c.y), Window(c, half)))

    def task(seed: int) -> List[float]:
        field = EdgeWeightField(seed, distribution)
        out = []
        for u, w, c, t, win in layout:
            tree = shortest_path_tree(field, t, win)
            out.append(merge_radius(tree, u, w, c, R))
        return out

    logger.info("coalescence: separations %s, R=%d, %d trial(s)", list(seps), R, trials)
    batch = run_trials(master_seed, trials, task, threads, progress, desc="coalescence")
    radii = np.array(batch.outcomes, dtype=np.float64).reshape(trials, len(seps))
    if trials:
        quantiles = tuple(tuple(float(v) for v in np.quantile(radii[:, j], QUANTILES)) for j in range(len(seps)))
    else:
        quantiles = tuple(tuple(math.nan for _ in QUANTILES) for _ in seps)
    return CoalescenceStats(distribution.label, seps, R, trials, radii, quantiles)
