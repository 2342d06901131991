# fpp_analysis/busemann.py
"""
Finite-horizon Busemann differences toward a distant ray, the linear
functional fitted to them, empirical geodesic directions and the
supporting-line diagnostic against an estimated shape.

Sign convention: B(x, y) = T(x, v) - T(y, v) for far anchors v, so a
unit-weight metric with v far to the north-east gives B(0, z) = z_x + z_y.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np

from fpp_core.errors import BoundsError, DegenerateFitError, DegenerateInputError, DomainError
from fpp_core.lattice import Vertex, Window
from fpp_core.metric import GeodesicTree, WindowWeights, shortest_path_tree

if TYPE_CHECKING:
    from fpp_experiments.shape import ShapeEstimate

logger = logging.getLogger(__name__)

DEFAULT_R0 = 16
DEFAULT_HORIZONS = 4
WINDOW_FACTOR = 1.5
WITNESS_TOLERANCE = 1e-9

TreeCache = Dict[Tuple[Vertex, Window], GeodesicTree]


def _ray_point(root: Vertex, theta: float, r: float) -> Vertex:
    return Vertex(root[0] + round(r * math.cos(theta)), root[1] + round(r * math.sin(theta)))


def _tree(field: WindowWeights, source: Vertex, window: Window, cache: Optional[TreeCache]) -> GeodesicTree:
    if cache is None:
        return shortest_path_tree(field, source, window)
    key = (Vertex(*source), window)
    if key not in cache:
        cache[key] = shortest_path_tree(field, source, window)
    return cache[key]


@dataclass(frozen=True)
class RayApproximation:
    """Anchors v_1..v_K at radii r_k = r0 * 2^k standing in for an infinite geodesic."""

    root: Vertex
    theta: float
    radii: Tuple[int, ...]
    anchors: Tuple[Vertex, ...]
    windows: Tuple[Window, ...]
    on_geodesic: bool = False

    def __post_init__(self) -> None:
        if not (len(self.radii) == len(self.anchors) == len(self.windows)) or not self.radii:
            raise DomainError("radii, anchors and windows must be non-empty and aligned")
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise DomainError(f"radii must increase, got {self.radii}")
        largest = max(w.half_width for w in self.windows)
        if 3 * self.radii[-1] > 2 * largest:
            raise BoundsError(f"r_K={self.radii[-1]} exceeds 2/3 of the largest window half-width {largest}")

    @staticmethod
    def horizon_radii(r0: int = DEFAULT_R0, horizons: int = DEFAULT_HORIZONS) -> Tuple[int, ...]:
        return tuple(int(r0) << k for k in range(1, int(horizons) + 1))

    @classmethod
    def straight(
        cls, root: Vertex, theta: float, r0: int = DEFAULT_R0, horizons: int = DEFAULT_HORIZONS
    ) -> "RayApproximation":
        radii = cls.horizon_radii(r0, horizons)
        anchors = tuple(_ray_point(root, theta, r) for r in radii)
        windows = tuple(Window(Vertex(*root), math.ceil(WINDOW_FACTOR * r)) for r in radii)
        return cls(Vertex(*root), float(theta), radii, anchors, windows)

    @classmethod
    def along_geodesic(
        cls,
        field: WindowWeights,
        root: Vertex,
        theta: float,
        r0: int = DEFAULT_R0,
        horizons: int = DEFAULT_HORIZONS,
        cache: Optional[TreeCache] = None,
    ) -> "RayApproximation":
        """Anchors picked on the computed geodesic from the root toward the farthest ray point."""
        base = cls.straight(root, theta, r0, horizons)
        tree = _tree(field, base.root, base.windows[-1], cache)
        path = tree.path_to(base.anchors[-1])
        pts = np.array(path.vertices, dtype=np.float64)
        anchors: List[Vertex] = []
        last = 0
        for r, ideal in zip(base.radii, base.anchors):
            gaps = np.hypot(pts[last:, 0] - ideal[0], pts[last:, 1] - ideal[1])
            j = last + int(np.argmin(gaps))
            anchors.append(path.vertices[j])
            last = j
        if len(set(anchors)) != len(anchors):
            raise DegenerateInputError("geodesic too short to separate the horizons")
        return cls(base.root, base.theta, base.radii, tuple(anchors), base.windows, on_geodesic=True)

    @property
    def horizons(self) -> int:
        return len(self.radii)


@dataclass(frozen=True)
class BusemannEstimate:
    x: Vertex
    y: Vertex
    ray: RayApproximation
    passage_x: Tuple[float, ...]
    passage_y: Tuple[float, ...]
    bounds: Tuple[float, ...]
    witness_x: Optional[Tuple[float, ...]] = None
    witness_y: Optional[Tuple[float, ...]] = None

    @property
    def values(self) -> Tuple[float, ...]:
        return tuple(a - b for a, b in zip(self.passage_x, self.passage_y))

    @property
    def final(self) -> float:
        return self.values[-1]

    @property
    def gap(self) -> float:
        v = self.values
        return abs(v[-1] - v[-2]) if len(v) > 1 else math.nan

    def exact_values(self) -> Tuple[Fraction, ...]:
        """b_k from the stored passage times in exact rational arithmetic."""
        return tuple(Fraction(a) - Fraction(b) for a, b in zip(self.passage_x, self.passage_y))

    def within_bounds(self, tol: float = WITNESS_TOLERANCE) -> bool:
        return all(abs(b) <= t + tol for b, t in zip(self.values, self.bounds))

    @staticmethod
    def _nonincreasing(seq: Optional[Tuple[float, ...]], tol: float) -> Optional[bool]:
        if seq is None:
            return None
        return all(b <= a + tol for a, b in zip(seq, seq[1:]))

    def witness_x_monotone(self, tol: float = WITNESS_TOLERANCE) -> Optional[bool]:
        return self._nonincreasing(self.witness_x, tol)

    def witness_y_monotone(self, tol: float = WITNESS_TOLERANCE) -> Optional[bool]:
        return self._nonincreasing(self.witness_y, tol)

    def to_rows(self, seed: int) -> List[Dict[str, object]]:
        gap = self.gap
        return [
            {
                "seed": seed,
                "x": f"{self.x[0]};{self.x[1]}",
                "y": f"{self.y[0]};{self.y[1]}",
                "k": k + 1,
                "r_k": r,
                "b_k": b,
                "gap": gap,
                "bound_T": t,
            }
            for k, (r, b, t) in enumerate(zip(self.ray.radii, self.values, self.bounds))
        ]


def busemann_sequence(
    field: WindowWeights,
    x: Vertex,
    y: Vertex,
    ray: RayApproximation,
    cache: Optional[TreeCache] = None,
) -> BusemannEstimate:
    """
    b_k = T(x, v_k) - T(y, v_k), both read from trees over the k-th window.
    Passing a cache shared across pairs keeps every difference on the same
    trees, which is what makes additivity hold exactly.
    """
    x, y = Vertex(*x), Vertex(*y)
    for anchor, window in zip(ray.anchors, ray.windows):
        window.require(x, "x")
        window.require(y, "y")
        window.require(anchor, "anchor")

    passage_x, passage_y, bounds = [], [], []
    for anchor, window in zip(ray.anchors, ray.windows):
        tx = _tree(field, x, window, cache)
        ty = _tree(field, y, window, cache)
        passage_x.append(tx.distance(anchor))
        passage_y.append(ty.distance(anchor))
        bounds.append(tx.distance(y))

    witness_x = witness_y = None
    if ray.on_geodesic:
        outer = ray.windows[-1]
        t0 = _tree(field, ray.root, outer, cache)
        tx = _tree(field, x, outer, cache)
        ty = _tree(field, y, outer, cache)
        witness_x = tuple(tx.distance(v) - t0.distance(v) for v in ray.anchors)
        witness_y = tuple(ty.distance(v) - t0.distance(v) for v in ray.anchors)

    est = BusemannEstimate(x, y, ray, tuple(passage_x), tuple(passage_y), tuple(bounds), witness_x, witness_y)
    if est.witness_x_monotone() is False or est.witness_y_monotone() is False:
        logger.warning("monotone witness violated for x=%s y=%s", tuple(x), tuple(y))
    return est


def probe_points(root: Vertex, theta: float, r0: int = DEFAULT_R0) -> List[Vertex]:
    """12 probes: rings r0/4, r0/2, 3r0/4 at angles theta +- pi/8, +- 3pi/8."""
    rings = [max(1, r0 // 4), max(2, r0 // 2), max(3, (3 * r0) // 4)]
    offsets = (-3 * math.pi / 8, -math.pi / 8, math.pi / 8, 3 * math.pi / 8)
    out: List[Vertex] = []
    for r in rings:
        for d in offsets:
            z = _ray_point(root, theta + d, r)
            if z != Vertex(*root) and z not in out:
                out.append(z)
    return out


# ---------------- linear functional ---------------- #


@dataclass(frozen=True)
class LinearFunctionalFit:
    a: float
    b: float
    residuals: Tuple[float, ...]
    residual: float

    @property
    def coefficients(self) -> Tuple[float, float]:
        return self.a, self.b

    def value(self, z: Sequence[float]) -> float:
        return self.a * z[0] + self.b * z[1]

    def along(self, theta: float) -> float:
        return self.a * math.cos(theta) + self.b * math.sin(theta)


def fit_linear_functional(samples: Sequence[Tuple[Vertex, float]]) -> LinearFunctionalFit:
    """Least-squares rho(z) = a z_x + b z_y through the origin."""
    if len(samples) < 3:
        raise DegenerateFitError(f"need at least 3 samples, got {len(samples)}")
    Z = np.array([[float(z[0]), float(z[1])] for z, _ in samples])
    B = np.array([float(v) for _, v in samples])
    if np.linalg.matrix_rank(Z) < 2:
        raise DegenerateFitError("sample points are collinear with the origin")
    coef, *_ = np.linalg.lstsq(Z, B, rcond=None)
    norms = np.hypot(Z[:, 0], Z[:, 1])
    resid = np.abs(B - Z @ coef) / np.where(norms > 0, norms, 1.0)
    return LinearFunctionalFit(float(coef[0]), float(coef[1]), tuple(resid.tolist()), float(resid.max()))


# ---------------- directions ---------------- #


@dataclass(frozen=True)
class DirectionEstimate:
    theta_min: float
    theta_max: float
    samples: int

    @property
    def width(self) -> float:
        return self.theta_max - self.theta_min

    def contains(self, theta: float, tol: float = 0.0) -> bool:
        mid = 0.5 * (self.theta_min + self.theta_max)
        d = (theta - mid + math.pi) % (2 * math.pi) - math.pi
        return abs(d) <= 0.5 * self.width + tol


def direction_estimate(tree: GeodesicTree, leaf: Vertex, tail_fraction: float) -> DirectionEstimate:
    if not 0 < tail_fraction <= 1:
        raise DomainError(f"tail fraction must be in (0, 1], got {tail_fraction}")
    path = tree.path_to(leaf)
    if path.steps < 10:
        raise DegenerateInputError(f"path to {tuple(leaf)} has {path.steps} steps, need >= 10")
    count = max(1, math.ceil(tail_fraction * len(path)))
    rx, ry = tree.source
    tail = [v for v in path.vertices[-count:] if v != tree.source]
    ref = math.atan2(leaf[1] - ry, leaf[0] - rx)
    angles = [
        ref + (math.atan2(v[1] - ry, v[0] - rx) - ref + math.pi) % (2 * math.pi) - math.pi
        for v in tail
    ]
    return DirectionEstimate(min(angles), max(angles), len(angles))


# ---------------- supporting line ---------------- #


@dataclass(frozen=True)
class ArcReport:
    max_excess: float
    violation: bool
    violating: Tuple[float, ...]
    arc: Tuple[float, ...]
    direction_in_arc: bool
    excess: Tuple[float, ...] = dc_field(default=())

    def to_dict(self) -> Dict[str, object]:
        return {
            "max_excess": self.max_excess,
            "violation": self.violation,
            "violating_directions": list(self.violating),
            "arc": list(self.arc),
            "direction_in_arc": self.direction_in_arc,
        }


def arc_check(
    fit: LinearFunctionalFit,
    shape: "ShapeEstimate",
    direction: DirectionEstimate,
    ci_multiplier: float = 2.0,
) -> ArcReport:
    thetas = np.asarray(shape.thetas, dtype=np.float64)
    if thetas.size == 0:
        raise DomainError("shape estimate has an empty direction grid")
    mu = np.asarray(shape.mu_hat, dtype=np.float64)
    se = np.asarray(shape.mu_se, dtype=np.float64)
    rho = fit.a * np.cos(thetas) + fit.b * np.sin(thetas)

    excess = rho - mu
    slack = ci_multiplier * se + 1e-12
    bad = excess > slack
    gap = mu - rho
    in_arc = gap <= gap.min() + slack

    spacing = 2 * math.pi / thetas.size
    hit = any(direction.contains(float(t), tol=0.5 * spacing) for t in thetas[in_arc])
    if bad.any():
        logger.warning("rho exceeds mu-hat beyond %.1f SE in %d direction(s)", ci_multiplier, int(bad.sum()))
    return ArcReport(
        max_excess=float(excess.max()),
        violation=bool(bad.any()),
        violating=tuple(thetas[bad].tolist()),
        arc=tuple(thetas[in_arc].tolist()),
        direction_in_arc=hit,
        excess=tuple(excess.tolist()),
    )
