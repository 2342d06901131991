"""
Unit tests for the Monte Carlo layer.

Core claims:
    - trials run in index order and give the same outcomes on any thread count
    - a failing trial surfaces with its index and replayable seed
    - Wilson intervals and log-log fits behave on known inputs
    - unit weights give mu(theta) = |cos| + |sin| and exact symmetry
    - the extended shape check is exact under unit weights and tight at epsilon 0
    - the midpoint law is degenerate under unit weights and radius 1 is rejected
    - coalescence radii are zero at separation 0 and capped at R
    - exponent fits need three sizes and flag non-positive statistics
"""

import math

import numpy as np
import pytest
from pytest import approx

from fpp_core.errors import ConfigError, FitError, TrialFailure
from fpp_core.weights import WeightDistribution
from fpp_experiments.coalescence import coalescence_study, merge_vertex
from fpp_experiments.exponents import exponent_fit
from fpp_experiments.midpoint import midpoint_probability, strictly_decaying
from fpp_experiments.runner import run_trials, trial_seeds
from fpp_experiments.shape import (
    ball_growth,
    estimate_shape,
    extended_shape_check,
    l1_norm,
    policy_half_width,
    subadditivity_check,
    symmetry_check,
)
from fpp_experiments.stats import loglog_fit, mean_se, wilson_interval
from fpp_core.lattice import LatticePath, Vertex

EXP = WeightDistribution.exponential(1.0)
ONES = WeightDistribution.constant_one()


# -- Runner ------------------------------------------------------------------

def test_trials_independent_of_threads():
    one = run_trials(5, 200, lambda seed: seed % 97, threads=1)
    four = run_trials(5, 200, lambda seed: seed % 97, threads=4)
    assert one.outcomes == four.outcomes
    assert one.seeds == tuple(trial_seeds(5, 200))


def test_ten_thousand_trivial_trials():
    batch = run_trials(1, 10_000, lambda seed: True, threads=4)
    assert sum(batch.outcomes) == 10_000


def test_failure_carries_seed():
    bad = trial_seeds(3, 10)[4]

    def task(seed):
        if seed == bad:
            raise RuntimeError("boom")
        return seed

    with pytest.raises(TrialFailure) as info:
        run_trials(3, 10, task, threads=2)
    assert info.value.trial_index == 4
    assert info.value.seed == bad
    assert info.value.to_dict()["success"] is False


# -- Statistics --------------------------------------------------------------

def test_wilson_interval():
    lo, hi = wilson_interval(0, 10)
    assert lo == approx(0.0, abs=1e-12) and 0 < hi < 0.35
    lo, hi = wilson_interval(5, 10)
    assert lo + hi == approx(1.0)
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_mean_se():
    m, s = mean_se([1.0, 2.0, 3.0])
    assert m == 2.0 and s == approx(1 / math.sqrt(3))
    assert math.isnan(mean_se([1.0])[1])


def test_loglog_fit_recovers_slope():
    xs = [8, 16, 32, 64]
    fit = loglog_fit(xs, [3 * x ** 0.5 for x in xs])
    assert fit.slope == approx(0.5, abs=1e-12)
    with pytest.raises(FitError):
        loglog_fit([1, 2], [1, 2])


# -- Shape -------------------------------------------------------------------

def test_window_policy():
    assert policy_half_width(16) == 24
    with pytest.raises(ConfigError):
        policy_half_width(8, 10)


def test_unit_weight_shape():
    est = estimate_shape(ONES, radii=(8, 16), directions=8, trials=3, master_seed=1)
    for theta, mu, se in zip(est.thetas, est.mu_hat, est.mu_se):
        target = (round(16 * math.cos(theta)), round(16 * math.sin(theta)))
        assert mu == approx(l1_norm(target) / math.hypot(*target))
        assert se == 0.0
    assert est.mu_hat[0] == 1.0
    assert all(c.passed for c in est.checks)
    assert len(est.to_frame()) == 16


def test_shape_independent_of_threads():
    a = estimate_shape(EXP, radii=(4, 8), directions=4, trials=6, master_seed=9, threads=1)
    b = estimate_shape(EXP, radii=(4, 8), directions=4, trials=6, master_seed=9, threads=3)
    assert np.array_equal(a.mean_passage, b.mean_passage)
    assert a.mu_hat == b.mu_hat


def test_shape_rejects_pinned_window():
    with pytest.raises(ConfigError):
        estimate_shape(EXP, radii=(8,), directions=4, trials=1, master_seed=0, window=10)


def test_subadditivity_flags_growth():
    per_length = np.array([[1.0, 1.5]])
    se = np.array([[0.1, 0.1]])
    assert not subadditivity_check((8, 16), per_length, se).passed
    assert subadditivity_check((8, 16), per_length[:, ::-1], se).passed


def test_extended_shape_unit_weights():
    report = extended_shape_check(ONES, 0.0, inner_radii=(8,), offsets=(4,), trials=2, master_seed=0)
    assert report.violation_fraction == (0.0,)


def test_extended_shape_epsilon_zero():
    report = extended_shape_check(EXP, 0.0, inner_radii=(8,), offsets=(4,), trials=2, master_seed=0)
    assert report.violation_fraction == (1.0,)
    assert len(report.to_frame()) == 1


def test_ball_growth_columns():
    frame = ball_growth(ONES, 0, radius=8, times=(2.0, 4.0), directions=4)
    assert list(frame.columns) == ["t", "theta", "extent_over_t"]
    assert (frame["extent_over_t"] == 1.0).all()


# -- Midpoint ----------------------------------------------------------------

def test_midpoint_unit_weights_degenerate():
    curve = midpoint_probability(ONES, radii=(2, 4, 8), trials=3, master_seed=0)
    assert curve.degenerate
    assert curve.p_hat == (1.0, 1.0, 1.0)
    assert not curve.decay_verified


def test_midpoint_rejects_radius_one():
    with pytest.raises(ConfigError):
        midpoint_probability(EXP, radii=(1, 4), trials=2, master_seed=0)


def test_midpoint_estimates_in_range():
    curve = midpoint_probability(EXP, radii=(2, 4), trials=20, master_seed=3)
    for p, (lo, hi) in zip(curve.p_hat, curve.ci):
        assert 0.0 <= lo <= p + 1e-12
        assert p <= hi + 1e-12 and hi <= 1.0
    assert len(curve.to_frame()) == 2


def test_strictly_decaying():
    assert strictly_decaying([0.9, 0.5, 0.1], 1000)
    assert not strictly_decaying([0.5, 0.5], 1000)


# -- Coalescence -------------------------------------------------------------

def test_merge_vertex():
    p = LatticePath((Vertex(0, 0), Vertex(1, 0), Vertex(2, 0)))
    q = LatticePath((Vertex(0, 0), Vertex(1, 0), Vertex(1, 1)))
    assert merge_vertex(p, q) == Vertex(1, 0)


def test_coalescence_radii():
    stats = coalescence_study(EXP, separations=(0, 2, 4), target_radius=32, trials=4, master_seed=1)
    assert (stats.radii[:, 0] == 0).all()
    assert stats.bounded()
    assert list(stats.to_frame()["separation"]) == [0, 2, 4]


def test_coalescence_rejects_wide_separation():
    with pytest.raises(ConfigError):
        coalescence_study(EXP, separations=(8,), target_radius=32, trials=1, master_seed=0)


# -- Exponents ---------------------------------------------------------------

def test_exponent_needs_three_sizes():
    with pytest.raises(FitError):
        exponent_fit(EXP, "xi", sizes=(8, 16), trials=2, master_seed=0)


def test_exponent_degenerate_under_unit_weights():
    fit = exponent_fit(ONES, "chi", sizes=(4, 8, 16), trials=3, master_seed=0)
    assert fit.degenerate and math.isnan(fit.slope)


def test_exponent_xi_runs():
    fit = exponent_fit(EXP, "xi", sizes=(4, 8, 16), trials=5, master_seed=2)
    assert len(fit.statistic) == 3
    assert len(fit.to_frame()) == 3


# -- Acceptance-scale --------------------------------------------------------

@pytest.mark.slow
def test_exponential_subadditivity_along_axis():
    est = estimate_shape(EXP, radii=(16, 32, 64, 128), directions=(0.0,), trials=1000, master_seed=1, threads=8)
    sub = est.checks[1]
    assert sub.name == "subadditivity" and sub.passed


@pytest.mark.slow
def test_exponential_shape_symmetry_and_extended_check():
    est = estimate_shape(EXP, radii=(128,), directions=16, trials=500, master_seed=1, threads=8)
    sym = est.checks[0]
    assert sym.name == "symmetry"
    # 48 image comparisons at 2 SE: a handful may miss, none by 4 SE
    assert len(sym.failures) <= 0.2 * 48
    assert symmetry_check(est.thetas, est.mu_hat, est.mu_se, k=4.0).passed
    report = extended_shape_check(EXP, 0.2, inner_radii=(32, 128), offsets=(8, 16), trials=50,
                                  master_seed=1, mu=est.norm, threads=8)
    assert report.violation_fraction[1] <= report.violation_fraction[0]


@pytest.mark.slow
def test_exponential_midpoint_decay():
    curve = midpoint_probability(EXP, radii=(8, 16, 32, 64), trials=10_000, master_seed=1, threads=8)
    assert curve.decay_verified
    assert all(a > b for a, b in zip(curve.p_hat, curve.p_hat[1:]))
    assert curve.slope < 0


@pytest.mark.slow
def test_exponential_xi_slope_in_band():
    fit = exponent_fit(EXP, "xi", sizes=(32, 64, 128, 256), trials=1000, master_seed=1, threads=8)
    assert not fit.degenerate
    assert 0.45 <= fit.slope <= 0.85
