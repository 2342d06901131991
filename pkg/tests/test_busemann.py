"""
Unit tests for finite-horizon Busemann differences and the supporting line.

Core claims:
    - B(x, x) = 0 and |b_k(x, y)| <= T(x, y)
    - additivity holds exactly on shared trees
    - x on the geodesic from y to v_K gives b_K(x, y) = -T(y, x)
    - anchors on the computed geodesic make the witnesses nonincreasing
    - unit weights toward the north-east give rho = (1, 1); toward the east b = z.x - |z.y|
    - direction intervals narrow with distance; a full tail sweeps the whole path
    - horizon residuals fall from r = 64 to r = 256 (slow)
    - fits with fewer than three or collinear samples are degenerate
    - arc_check flags rho above mu-hat and finds the touching arc
"""

import math

import pytest
from pytest import approx

from backend.models import RunConfig
from fpp_analysis.busemann import (
    ArcReport,
    DirectionEstimate,
    LinearFunctionalFit,
    RayApproximation,
    arc_check,
    busemann_sequence,
    direction_estimate,
    fit_linear_functional,
    probe_points,
)
from fpp_core.errors import BoundsError, DegenerateFitError, DegenerateInputError, DomainError
from fpp_core.lattice import HalfPlane, Vertex, Window
from fpp_core.metric import RestrictedField, shortest_path_tree
from fpp_core.weights import EdgeWeightField, WeightDistribution
from fpp_experiments.shape import ShapeEstimate
from fpp_experiments.studies import run_study

ORIGIN = Vertex(0, 0)


# -- Helpers -----------------------------------------------------------------

def _field(seed, dist=None):
    return EdgeWeightField(seed, dist or WeightDistribution.exponential(1.0))


def _small_ray(theta=0.0):
    return RayApproximation.straight(ORIGIN, theta, r0=4, horizons=3)


def _shape(mu, se):
    thetas = tuple(2 * math.pi * j / len(mu) for j in range(len(mu)))
    return ShapeEstimate(distribution="test", thetas=thetas, mu_hat=tuple(mu), mu_se=tuple(se))


# -- Rays --------------------------------------------------------------------

def test_straight_ray_layout():
    ray = RayApproximation.straight(ORIGIN, 0.0)
    assert ray.radii == (32, 64, 128, 256)
    assert ray.anchors[-1] == Vertex(256, 0)
    assert [w.half_width for w in ray.windows] == [48, 96, 192, 384]


def test_ray_rejects_small_windows():
    with pytest.raises(BoundsError):
        RayApproximation(ORIGIN, 0.0, (8,), (Vertex(8, 0),), (Window(ORIGIN, 10),))


# -- Busemann sequence -------------------------------------------------------

def test_same_point_is_zero():
    est = busemann_sequence(_field(1), Vertex(1, 1), Vertex(1, 1), _small_ray())
    assert est.values == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_bounded_by_passage_time(seed):
    est = busemann_sequence(_field(seed), Vertex(-2, 1), Vertex(3, -1), _small_ray(0.5))
    assert est.within_bounds()
    assert len(est.to_rows(seed)) == 3


@pytest.mark.parametrize("seed", range(5))
def test_additivity_is_exact(seed):
    field = _field(seed)
    ray = _small_ray(1.0)
    cache = {}
    x, y, z = Vertex(0, 0), Vertex(2, 3), Vertex(-3, 1)
    xy = busemann_sequence(field, x, y, ray, cache)
    yz = busemann_sequence(field, y, z, ray, cache)
    xz = busemann_sequence(field, x, z, ray, cache)
    for a, b, c in zip(xy.exact_values(), yz.exact_values(), xz.exact_values()):
        assert a + b == c


@pytest.mark.parametrize("seed", range(5))
def test_point_on_geodesic_gives_minus_passage(seed):
    field = _field(seed)
    ray = _small_ray()
    tree = shortest_path_tree(field, ORIGIN, ray.windows[-1])
    x = tree.path_to(ray.anchors[-1])[3]
    est = busemann_sequence(field, x, ORIGIN, ray)
    assert est.final == approx(-tree.distance(x), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_witnesses_nonincreasing(seed):
    field = _field(seed)
    ray = RayApproximation.along_geodesic(field, ORIGIN, math.pi / 6, r0=4, horizons=3)
    assert ray.on_geodesic
    est = busemann_sequence(field, Vertex(1, 2), Vertex(-2, 1), ray)
    assert est.witness_x_monotone() is True
    assert est.witness_y_monotone() is True


def test_points_outside_window_rejected():
    with pytest.raises(BoundsError):
        busemann_sequence(_field(0), Vertex(20, 0), ORIGIN, _small_ray())


def test_full_halfplane_restriction_changes_nothing():
    field = _field(3)
    restricted = RestrictedField(field, HalfPlane(0, anchor=Vertex(-100, 0)))
    a = busemann_sequence(field, Vertex(1, 1), ORIGIN, _small_ray())
    b = busemann_sequence(restricted, Vertex(1, 1), ORIGIN, _small_ray())
    assert a.values == b.values


# -- Linear functional -------------------------------------------------------

def test_unit_weights_northeast_functional():
    field = _field(0, WeightDistribution.constant_one())
    ray = RayApproximation.straight(ORIGIN, math.pi / 4, r0=8, horizons=2)
    cache = {}
    samples = []
    for z in probe_points(ORIGIN, math.pi / 4, r0=8):
        est = busemann_sequence(field, ORIGIN, z, ray, cache)
        assert est.values == (float(z.x + z.y),) * 2
        samples.append((z, est.final))
    fit = fit_linear_functional(samples)
    assert fit.coefficients == approx((1.0, 1.0), abs=1e-9)
    assert fit.residual < 1e-9


def test_unit_weights_east_functional():
    # B(x, y) = T(x, v) - T(y, v); toward an east anchor v this is z.x - |z.y| for B(0, z)
    field = _field(0, WeightDistribution.constant_one())
    ray = RayApproximation.straight(ORIGIN, 0.0, r0=8, horizons=2)
    assert ray.anchors == (Vertex(16, 0), Vertex(32, 0))
    cache = {}
    samples = []
    for z in probe_points(ORIGIN, 0.0, r0=8):
        est = busemann_sequence(field, ORIGIN, z, ray, cache)
        assert est.values == (float(z.x - abs(z.y)),) * 2
        samples.append((z, est.final))
    upper = [(z, b) for z, b in samples if z.y >= 0]
    assert fit_linear_functional(upper).coefficients == approx((1.0, -1.0), abs=1e-9)
    # e1 is a corner of the l1 ball: the y-symmetric samples fit rho = (a, 0) with a in (0, 1]
    fit = fit_linear_functional(samples)
    assert fit.b == approx(0.0, abs=1e-9)
    assert 0.0 < fit.a <= 1.0


def test_probe_points_default_count():
    assert len(probe_points(ORIGIN, 0.3)) == 12


def test_fit_recovers_functional():
    pts = [Vertex(1, 0), Vertex(0, 1), Vertex(2, 3), Vertex(-1, 4)]
    fit = fit_linear_functional([(z, 2 * z.x + z.y) for z in pts])
    assert fit.coefficients == approx((2.0, 1.0), abs=1e-12)
    assert fit.along(0.0) == approx(2.0)


def test_fit_degenerate_inputs():
    with pytest.raises(DegenerateFitError):
        fit_linear_functional([(Vertex(1, 0), 1.0), (Vertex(0, 1), 1.0)])
    with pytest.raises(DegenerateFitError):
        fit_linear_functional([(Vertex(1, 1), 1.0), (Vertex(2, 2), 2.0), (Vertex(-3, -3), -3.0)])


# -- Directions --------------------------------------------------------------

def test_direction_of_straight_geodesic():
    tree = shortest_path_tree(_field(0, WeightDistribution.constant_one()), ORIGIN, Window(ORIGIN, 30))
    est = direction_estimate(tree, Vertex(20, 0), 1.0)
    assert est.width == 0.0 and est.contains(0.0)
    assert est.samples == 20


def test_direction_estimate_rejects_bad_input():
    tree = shortest_path_tree(_field(0), ORIGIN, Window(ORIGIN, 10))
    with pytest.raises(DegenerateInputError):
        direction_estimate(tree, Vertex(1, 0), 0.5)
    with pytest.raises(DomainError):
        direction_estimate(tree, Vertex(10, 0), 0.0)


def test_direction_interval_shrinks_with_distance():
    tree = shortest_path_tree(_field(0, WeightDistribution.constant_one()), ORIGIN, Window(ORIGIN, 260))
    for n in (10, 40, 160):
        est = direction_estimate(tree, Vertex(n, 0), 0.5)
        assert est.contains(0.0) and est.width == 0.0
    near = direction_estimate(tree, Vertex(8, 2), 0.5)
    far = direction_estimate(tree, Vertex(256, 2), 0.5)
    assert far.contains(math.atan2(2, 256), tol=1e-12)
    # the far tail stays at x >= 127, so its angles lie in [0, atan2(2, 127)]
    assert far.width <= math.atan2(2, 127) + 1e-12
    assert near.width > math.atan2(2, 127)


def test_full_tail_sweeps_whole_path():
    tree = shortest_path_tree(_field(4), ORIGIN, Window(ORIGIN, 30))
    leaf = Vertex(20, 3)
    full = direction_estimate(tree, leaf, 1.0)
    half = direction_estimate(tree, leaf, 0.5)
    assert full.samples == tree.path_to(leaf).steps
    assert full.theta_min <= half.theta_min <= half.theta_max <= full.theta_max


# -- Supporting line ---------------------------------------------------------

def test_arc_touches_at_east():
    shape = _shape([1.0, 1.0, 1.0, 1.0], [0.0] * 4)
    report = arc_check(LinearFunctionalFit(1.0, 0.0, (), 0.0), shape, DirectionEstimate(-0.1, 0.1, 5))
    assert isinstance(report, ArcReport)
    assert not report.violation
    assert report.arc == (0.0,)
    assert report.direction_in_arc
    assert report.max_excess == approx(0.0, abs=1e-12)


def test_arc_flags_excess_beyond_ci():
    shape = _shape([1.0, 1.0, 1.0, 1.0], [0.1] * 4)
    report = arc_check(LinearFunctionalFit(1.3, 0.0, (), 0.0), shape, DirectionEstimate(-0.1, 0.1, 5))
    assert report.violation
    assert report.violating == (0.0,)
    assert report.to_dict()["max_excess"] == approx(0.3)


def test_arc_misses_direction():
    shape = _shape([1.0, 1.0, 1.0, 1.0], [0.0] * 4)
    report = arc_check(LinearFunctionalFit(1.0, 0.0, (), 0.0), shape, DirectionEstimate(3.0, 3.2, 5))
    assert not report.direction_in_arc


# -- Acceptance-scale --------------------------------------------------------

@pytest.mark.slow
def test_residual_falls_with_horizon():
    config = RunConfig.model_validate({"command": "busemann", "seed": 1, "trials": 16, "threads": 8,
                                       "r0": 32, "horizons": 3, "directions": 8})
    out = run_study(config)
    fits = out.tables["fit.csv"]
    assert fits["r_k"].tolist() == [64, 128, 256]
    assert fits["mean_residual"].iloc[-1] < fits["mean_residual"].iloc[0]
    assert out.result.verdicts["residual_decreasing"] is True
