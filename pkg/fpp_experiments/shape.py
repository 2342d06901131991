# fpp_experiments/shape.py
"""
Time constant and limit-shape estimates.

One tree per trial, rooted at the origin over a window of half-width
ceil(1.5 * largest radius); every (direction, radius) target is read off that
tree. mu_hat(theta) = mean T(0, target) / |target| at the largest radius.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from fpp_core.errors import ConfigError
from fpp_core.lattice import Vertex, Window
from fpp_core.metric import ball_profile, shortest_path_tree
from fpp_core.weights import EdgeWeightField, WeightDistribution

from .runner import run_trials
from .stats import mean_se

logger = logging.getLogger(__name__)

ORIGIN = Vertex(0, 0)
WINDOW_FACTOR = 1.5


def policy_half_width(radius: int, pinned: Optional[int] = None) -> int:
    """Window half-width for a probe radius; a pinned width must be at least 1.5x the radius."""
    if pinned is None:
        return math.ceil(WINDOW_FACTOR * radius)
    if 3 * radius > 2 * pinned:
        raise ConfigError(
            f"radius {radius} exceeds 2/3 of window half-width {pinned}", field="radii"
        )
    return int(pinned)


def direction_grid(count: int) -> Tuple[float, ...]:
    if count < 1:
        raise ConfigError(f"direction grid needs at least one direction, got {count}", field="directions")
    return tuple(2 * math.pi * j / count for j in range(count))


def ray_target(r: int, theta: float, origin: Vertex = ORIGIN) -> Vertex:
    return Vertex(origin.x + round(r * math.cos(theta)), origin.y + round(r * math.sin(theta)))


@dataclass(frozen=True)
class InvariantCheck:
    name: str
    passed: bool
    worst: float
    failures: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, object]:
        return {"passed": self.passed, "worst": self.worst, "failures": list(self.failures)}


@dataclass(frozen=True, eq=False)
class ShapeEstimate:
    distribution: str
    thetas: Tuple[float, ...]
    mu_hat: Tuple[float, ...]
    mu_se: Tuple[float, ...]
    radii: Tuple[int, ...] = ()
    mean_passage: Optional[np.ndarray] = None
    se_passage: Optional[np.ndarray] = None
    norms: Optional[np.ndarray] = None
    trials: int = 0
    checks: Tuple[InvariantCheck, ...] = field(default_factory=tuple)

    def mu_at(self, theta: float) -> float:
        """Periodic linear interpolation of mu_hat over the grid."""
        grid = np.asarray(self.thetas + (self.thetas[0] + 2 * math.pi,))
        vals = np.asarray(self.mu_hat + (self.mu_hat[0],))
        return float(np.interp(theta % (2 * math.pi), grid, vals))

    def norm(self, y: Sequence[float]) -> float:
        r = math.hypot(y[0], y[1])
        return 0.0 if r == 0 else r * self.mu_at(math.atan2(y[1], y[0]))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for j, theta in enumerate(self.thetas):
            for k, r in enumerate(self.radii):
                rows.append(
                    {
                        "theta": theta,
                        "radius": r,
                        "trials": self.trials,
                        "mean_T": float(self.mean_passage[j, k]),
                        "se_T": float(self.se_passage[j, k]),
                        "T_per_length": float(self.mean_passage[j, k] / self.norms[j, k]),
                        "mu_hat": self.mu_hat[j],
                        "mu_se": self.mu_se[j],
                    }
                )
        return pd.DataFrame(rows, columns=["theta", "radius", "trials", "mean_T", "se_T", "T_per_length", "mu_hat", "mu_se"])


def l1_norm(y: Sequence[float]) -> float:
    return abs(y[0]) + abs(y[1])


# ---------------- invariant checks ---------------- #


def symmetry_check(thetas: Sequence[float], mu: Sequence[float], se: Sequence[float], k: float = 2.0) -> InvariantCheck:
    """mu_hat(theta) vs mu_hat(pi/2 - theta), mu_hat(theta + pi/2), mu_hat(-theta)."""
    m = len(thetas)
    maps = [("reflect", lambda j: (-j) % m)]
    if m % 4 == 0:
        q = m // 4
        maps += [("diagonal", lambda j: (q - j) % m), ("rotate", lambda j: (j + q) % m)]
    worst, failures = 0.0, []
    for name, image in maps:
        for j in range(m):
            i = image(j)
            tol = k * math.hypot(se[j], se[i]) + 1e-12
            diff = abs(mu[j] - mu[i])
            worst = max(worst, diff - tol)
            if diff > tol:
                failures.append(f"{name}:{j}->{i}")
    return InvariantCheck("symmetry", not failures, worst, tuple(sorted(set(failures))))


def subadditivity_check(
    radii: Sequence[int], per_length: np.ndarray, per_length_se: np.ndarray, k: float = 2.0
) -> InvariantCheck:
    """mean T/|target| at the next radius must not exceed the previous one by more than k SE."""
    worst, failures = -math.inf, []
    for j in range(per_length.shape[0]):
        for a in range(len(radii) - 1):
            tol = k * math.hypot(per_length_se[j, a], per_length_se[j, a + 1]) + 1e-12
            excess = per_length[j, a + 1] - per_length[j, a]
            worst = max(worst, excess - tol)
            if excess > tol:
                failures.append(f"dir{j}:r{radii[a]}->r{radii[a + 1]}")
    return InvariantCheck("subadditivity", not failures, worst if math.isfinite(worst) else 0.0, tuple(failures))


# ---------------- estimators ---------------- #


def estimate_shape(
    distribution: WeightDistribution,
    radii: Sequence[int],
    directions: int | Sequence[float],
    trials: int,
    master_seed: int,
    threads: int = 1,
    window: Optional[int] = None,
    progress: bool = False,
) -> ShapeEstimate:
    radii = tuple(sorted(int(r) for r in radii))
    if not radii or radii[0] < 1:
        raise ConfigError("radii must be positive", field="radii")
    half = policy_half_width(radii[-1], window)
    thetas = direction_grid(directions) if isinstance(directions, int) else tuple(float(t) for t in directions)
    win = Window(ORIGIN, half)
    targets = [[ray_target(r, t) for r in radii] for t in thetas]
    norms = np.array([[math.hypot(*v) for v in row] for row in targets])
    idx = np.array([[win.index(v) for v in row] for row in targets])

    def task(seed: int) -> np.ndarray:
        tree = shortest_path_tree(EdgeWeightField(seed, distribution), ORIGIN, win)
        return tree.dist[idx]

    logger.info("shape: %d trial(s), radii %s, %d direction(s), window half-width %d",
                trials, list(radii), len(thetas), half)
    batch = run_trials(master_seed, trials, task, threads, progress, desc="shape")
    samples = np.stack(batch.outcomes) if batch.outcomes else np.zeros((0,) + norms.shape)

    mean = np.zeros(norms.shape)
    se = np.zeros(norms.shape)
    for j in range(norms.shape[0]):
        for k in range(norms.shape[1]):
            mean[j, k], se[j, k] = mean_se(samples[:, j, k])
    se = np.nan_to_num(se, nan=0.0)
    per_length = mean / norms
    per_length_se = se / norms

    mu = per_length[:, -1]
    mu_se = per_length_se[:, -1]
    checks = (
        symmetry_check(thetas, mu.tolist(), mu_se.tolist()),
        subadditivity_check(radii, per_length, per_length_se),
    )
    for c in checks:
        if not c.passed:
            logger.warning("shape %s check failed at %d point(s)", c.name, len(c.failures))
    return ShapeEstimate(
        distribution=distribution.label,
        thetas=tuple(thetas),
        mu_hat=tuple(mu.tolist()),
        mu_se=tuple(mu_se.tolist()),
        radii=radii,
        mean_passage=mean,
        se_passage=se,
        norms=norms,
        trials=trials,
        checks=checks,
    )


@dataclass(frozen=True)
class ExtendedShapeReport:
    epsilon: float
    inner_radii: Tuple[int, ...]
    offsets: Tuple[int, ...]
    violation_fraction: Tuple[float, ...]
    per_trial: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for k, r in enumerate(self.inner_radii):
            vals = self.per_trial[:, k] if self.per_trial.size else np.zeros(0)
            m, s = mean_se(vals)
            rows.append({"epsilon": self.epsilon, "inner_radius": r, "trials": int(vals.size),
                         "violation_fraction": m, "se": s})
        return pd.DataFrame(rows, columns=["epsilon", "inner_radius", "trials", "violation_fraction", "se"])


_EIGHT = tuple(j * math.pi / 4 for j in range(8))


def extended_shape_check(
    distribution: WeightDistribution,
    epsilon: float,
    inner_radii: Sequence[int],
    offsets: Sequence[int],
    trials: int,
    master_seed: int,
    mu: Callable[[Sequence[float]], float] = l1_norm,
    threads: int = 1,
    progress: bool = False,
) -> ExtendedShapeReport:
    """
    Per trial and inner radius |z|, the share of probe pairs (z, y) with
    |T(z, z + y) - mu(y)| > epsilon * max(|z|, |y|). Eight directions each for
    z and y; one tree per z over a window of 1.5x the largest offset around z.
    """
    if epsilon < 0:
        raise ConfigError(f"epsilon must be >= 0, got {epsilon}", field="epsilon")
    inner = tuple(int(r) for r in inner_radii)
    offs = tuple(int(s) for s in offsets)
    if not offs or min(offs) < 1:
        raise ConfigError("offsets must be positive", field="offsets")
    half = policy_half_width(max(offs))
    ys = [ray_target(s, t) for s in offs for t in _EIGHT]
    ys = [y for y in dict.fromkeys(ys) if y != ORIGIN]
    mu_y = [mu(y) for y in ys]
    probes = [[ray_target(r, t) for t in _EIGHT] for r in inner]

    def task(seed: int) -> np.ndarray:
        field = EdgeWeightField(seed, distribution)
        out = np.zeros(len(inner))
        for k, zs in enumerate(probes):
            bad = total = 0
            for z in dict.fromkeys(zs):
                win = Window(z, half)
                tree = shortest_path_tree(field, z, win)
                zr = math.hypot(*z)
                for y, m in zip(ys, mu_y):
                    t = tree.distance(Vertex(z.x + y.x, z.y + y.y))
                    bad += abs(t - m) > epsilon * max(zr, math.hypot(*y))
                    total += 1
            out[k] = bad / total
        return out

    batch = run_trials(master_seed, trials, task, threads, progress, desc="extended shape")
    per_trial = np.stack(batch.outcomes) if batch.outcomes else np.zeros((0, len(inner)))
    fractions = tuple(float(x) for x in per_trial.mean(axis=0)) if trials else tuple(math.nan for _ in inner)
    return ExtendedShapeReport(float(epsilon), inner, offs, fractions, per_trial)


def ball_growth(
    distribution: WeightDistribution,
    seed: int,
    radius: int,
    times: Sequence[float],
    directions: int = 16,
) -> pd.DataFrame:
    """Rescaled radial extent of B(t) = {z : T(0, z) <= t} per direction, one realization."""
    win = Window(ORIGIN, policy_half_width(radius))
    tree = shortest_path_tree(EdgeWeightField(seed, distribution), ORIGIN, win)
    thetas = direction_grid(directions)
    rows: List[Dict[str, float]] = []
    for t in times:
        for theta, extent in zip(thetas, ball_profile(tree, t, thetas)):
            rows.append({"t": float(t), "theta": theta, "extent_over_t": extent})
    return pd.DataFrame(rows, columns=["t", "theta", "extent_over_t"])
