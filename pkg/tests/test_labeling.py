"""
Unit tests for unit flows, cumulative labels and class averaging.

Core claims:
    - the unit flow splits equally, skips dead branches and conserves mass
    - cumulative flow runs counterclockwise from just above the reference, which gets 1
    - the counterclockwise leaf order agrees with the boundary order
    - the Voronoi BFS matches the brute-force scan, ties included
    - a single site owns the whole window; no site asks for a retry
    - singleton classes reproduce their own cumulative flow
    - labels are monotone in boundary order and along tree paths
    - the class reference path is labeled 1
    - member references must share their last two edges with the class reference
    - class averages are monotone over every pair of boundary leaves
    - path labels are the min of phi, equal the terminal value and follow ccw order
"""

import math
import random

import numpy as np
import pytest
from pytest import approx

from fpp_analysis.labeling import (
    VoronoiPartition,
    averaged_labels,
    cumulative_flow,
    label_drift,
    label_of_path,
    leaf_order_consistent,
    paths_of,
    phi_monotone,
    reference_path,
    references_coalesce,
    unit_flow,
    voronoi_bruteforce,
    voronoi_partition,
)
from fpp_core.errors import CostGuardError, DomainError, RetryNeeded
from fpp_core.lattice import LatticePath, Vertex, Window, ccw_compare
from fpp_core.metric import GeodesicTree, shortest_path_tree
from fpp_core.weights import EdgeWeightField, VertexNoise, WeightDistribution

ORIGIN = Vertex(0, 0)
SKIP = (DomainError, RetryNeeded, CostGuardError)


# -- Helpers -----------------------------------------------------------------

def _field(seed):
    return EdgeWeightField(seed, WeightDistribution.exponential(1.0))


def _lp(*pts):
    return LatticePath(tuple(Vertex(*p) for p in pts))


def _three_leaves():
    w = Window(ORIGIN, 1)
    parents = {Vertex(1, 0): ORIGIN, Vertex(0, 1): ORIGIN, Vertex(-1, 0): ORIGIN}
    return GeodesicTree.from_parent_map(ORIGIN, w, parents)


def _hand_partition(window, classes, sites):
    """Partition with explicit members: classes maps vertex -> class id, all others go to the last class."""
    assignment = np.full(window.size, len(sites) - 1, dtype=np.int64)
    for v, k in classes.items():
        assignment[window.index(v)] = k
    return VoronoiPartition(
        level=1,
        window=window,
        sites=tuple(sites),
        site_xi=tuple(0.0 for _ in sites),
        assignment=assignment,
        distance=np.zeros(window.size, dtype=np.int64),
    )


# -- Unit flow ---------------------------------------------------------------

def test_flow_on_a_path():
    w = Window(ORIGIN, 3)
    parents = {Vertex(1, 0): ORIGIN, Vertex(2, 0): Vertex(1, 0), Vertex(3, 0): Vertex(2, 0)}
    flow = unit_flow(GeodesicTree.from_parent_map(ORIGIN, w, parents))
    assert flow.leaf_vertices == [Vertex(3, 0)]
    assert all(m == 1.0 for m in flow.mass.values())


def test_flow_splits_equally():
    flow = unit_flow(_three_leaves())
    for v in (Vertex(1, 0), Vertex(0, 1), Vertex(-1, 0)):
        assert flow.mass_at(v) == approx(1 / 3)
    assert flow.total_leaf_mass() == approx(1.0, abs=1e-12)
    assert len(flow.edge_masses()) == 3


def test_flow_skips_dead_branches():
    w = Window(ORIGIN, 2)
    parents = {Vertex(1, 0): ORIGIN, Vertex(2, 0): Vertex(1, 0), Vertex(0, 1): ORIGIN}
    flow = unit_flow(GeodesicTree.from_parent_map(ORIGIN, w, parents))
    assert flow.mass_at(Vertex(2, 0)) == 1.0
    assert flow.mass_at(Vertex(0, 1)) == 0.0


def test_flow_rejects_boundary_root():
    w = Window(ORIGIN, 1)
    with pytest.raises(DomainError):
        unit_flow(GeodesicTree.from_parent_map(Vertex(1, 0), w, {}))


@pytest.mark.parametrize("seed", range(3))
def test_flow_conserves_mass(seed):
    flow = unit_flow(shortest_path_tree(_field(seed), ORIGIN, Window(ORIGIN, 32)))
    assert flow.total_leaf_mass() == approx(1.0, abs=1e-9)
    assert flow.conservation_error() <= 1e-9
    assert all(flow.tree.window.is_boundary(v) for v in flow.leaf_vertices)


# -- Cumulative flow ---------------------------------------------------------

def test_cumulative_three_leaves():
    flow = unit_flow(_three_leaves())
    ref = reference_path(flow, 0.0)
    assert ref.leaf == Vertex(1, 0)
    assert reference_path(flow, math.pi / 2).leaf == Vertex(0, 1)
    cf = cumulative_flow(flow, ref)
    assert cf.order == (Vertex(0, 1), Vertex(-1, 0), Vertex(1, 0))
    assert cf.values == approx((1 / 3, 2 / 3, 1.0))
    assert cf.value(Vertex(1, 0)) == 1.0


def test_cumulative_single_leaf():
    w = Window(ORIGIN, 1)
    flow = unit_flow(GeodesicTree.from_parent_map(ORIGIN, w, {Vertex(0, -1): ORIGIN}))
    cf = cumulative_flow(flow, reference_path(flow))
    assert cf.values == (1.0,)


def test_cumulative_rejects_foreign_reference():
    flow = unit_flow(_three_leaves())
    with pytest.raises(DomainError):
        cumulative_flow(flow, LatticePath((ORIGIN, Vertex(0, -1))))


@pytest.mark.parametrize("seed", range(3))
def test_ccw_order_follows_boundary(seed):
    w = Window(ORIGIN, 24)
    flow = unit_flow(shortest_path_tree(_field(seed), ORIGIN, w))
    ref = reference_path(flow, 0.0)
    cf = cumulative_flow(flow, ref)
    offsets = [w.boundary_offset(v, ref.leaf) for v in cf.order]
    assert offsets == sorted(offsets)
    assert all(b >= a for a, b in zip(cf.values, cf.values[1:]))
    assert cf.values[-1] == 1.0 and cf.order[-1] == ref.leaf


# -- Voronoi classes ---------------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("level", [1, 2])
def test_voronoi_matches_bruteforce(seed, level):
    noise = VertexNoise(seed)
    w = Window(ORIGIN, 10)
    partition = voronoi_partition(noise, level, w)
    assert np.array_equal(partition.assignment, voronoi_bruteforce(noise, level, w))
    assert (partition.assignment >= 0).all()
    for k, site in enumerate(partition.sites):
        assert partition.class_of(site) == k
    assert partition.class_sizes().sum() == w.size
    again = voronoi_partition(noise, level, w)
    assert np.array_equal(again.assignment, partition.assignment)


def test_single_site_owns_window():
    w = Window(ORIGIN, 1)
    for seed in range(200):
        partition = voronoi_partition(VertexNoise(seed), 1, w) if _has_sites(seed, 1, w) else None
        if partition is not None and partition.realized == 1:
            assert partition.class_sizes().tolist() == [w.size]
            return
    pytest.fail("no single-site realization in 200 seeds")


def _has_sites(seed, level, window):
    return bool((VertexNoise(seed).uniforms(window) <= 4.0 ** -level).any())


def test_no_sites_asks_for_retry():
    w = Window(ORIGIN, 1)
    for seed in range(50):
        if not _has_sites(seed, 3, w):
            with pytest.raises(RetryNeeded) as info:
                voronoi_partition(VertexNoise(seed), 3, w)
            assert info.value.realized == 0
            return
    pytest.fail("every seed produced a site")


def test_level_must_be_positive():
    with pytest.raises(DomainError):
        voronoi_partition(VertexNoise(0), 0, Window(ORIGIN, 3))


def test_disagreement_shrinks_with_level():
    w = Window(ORIGIN, 32)
    means = []
    for level in (1, 2, 3):
        means.append(np.mean([voronoi_partition(VertexNoise(s), level, w).disagreement_fraction() for s in range(10)]))
    assert means[0] > means[1] > means[2]


@pytest.mark.slow
def test_disagreement_shrinks_with_level_large():
    w = Window(ORIGIN, 256)
    means = []
    for level in (1, 2, 3):
        means.append(np.mean([voronoi_partition(VertexNoise(s), level, w).disagreement_fraction() for s in range(100)]))
    assert means[0] >= means[1] >= means[2]


# -- Coalescing references ---------------------------------------------------

def test_references_need_two_shared_edges():
    ref = _lp((0, 0), (1, 0), (2, 0), (3, 0))
    assert references_coalesce(ref, ref)
    assert references_coalesce(_lp((1, 1), (1, 0), (2, 0), (3, 0)), ref)
    # same last edge, different edge before it
    assert not references_coalesce(_lp((2, -1), (2, 0), (3, 0)), ref)
    assert not references_coalesce(_lp((3, 0),), ref)
    short = _lp((0, 0), (1, 0))
    assert references_coalesce(_lp((-1, 0), (0, 0), (1, 0)), short)


# -- Class averaging ---------------------------------------------------------

def test_singleton_class_keeps_own_curve():
    w = Window(ORIGIN, 8)
    partition = _hand_partition(w, {ORIGIN: 0}, [ORIGIN, Vertex(5, 5)])
    labeling = averaged_labels(_field(2), partition, 0, w)
    member = labeling.member(ORIGIN)
    for leaf, value in member.cumulative.as_dict().items():
        assert labeling.label(ORIGIN, leaf) == value
        assert labeling.average_at(leaf) == value
    assert labeling.averaging_error == 0.0


def test_class_cap_enforced():
    w = Window(ORIGIN, 8)
    partition = _hand_partition(w, {ORIGIN: 0, Vertex(1, 0): 0}, [ORIGIN, Vertex(5, 5)])
    with pytest.raises(CostGuardError):
        averaged_labels(_field(2), partition, 0, w, cap=1)


def test_boundary_site_rejected():
    w = Window(ORIGIN, 8)
    partition = _hand_partition(w, {Vertex(8, 0): 0}, [Vertex(8, 0), ORIGIN])
    with pytest.raises(DomainError):
        averaged_labels(_field(2), partition, 0, w)


@pytest.mark.parametrize("seed", range(3))
def test_small_class_labels(seed):
    w = Window(ORIGIN, 12)
    members = {Vertex(x, y): 0 for x in (-1, 0, 1) for y in (-1, 0, 1)}
    partition = _hand_partition(w, members, [ORIGIN, Vertex(9, 9)])
    labeling = averaged_labels(_field(seed), partition, 0, w, threads=2)

    assert leaf_order_consistent(labeling)
    assert labeling.coalescence_discrepancy == 0.0
    assert len(labeling.members) + len(labeling.dropped) == 9
    site = labeling.member(ORIGIN)
    ref = site.flow.tree.path_to(labeling.reference_leaf)
    assert label_of_path(labeling, ref) == 1.0
    for m in labeling.members:
        assert phi_monotone(m)
        for path in paths_of(m):
            F = labeling.label(m.root, path.leaf)
            assert 0.0 <= F <= 1.0
            assert label_of_path(labeling, path) == F
    assert len(labeling.to_rows(seed)) == sum(len(m.labels) for m in labeling.members)


def test_label_of_path_rejects_foreign_edges():
    w = Window(ORIGIN, 8)
    partition = _hand_partition(w, {ORIGIN: 0}, [ORIGIN, Vertex(5, 5)])
    labeling = averaged_labels(_field(2), partition, 0, w)
    with pytest.raises(DomainError):
        label_of_path(labeling, LatticePath((ORIGIN, Vertex(1, 0), ORIGIN)))
    with pytest.raises(DomainError):
        label_of_path(labeling, LatticePath((ORIGIN,)))


def test_label_drift_bounded():
    w = Window(ORIGIN, 16)
    for seed in range(30):
        try:
            drift = label_drift(_field(seed), VertexNoise(seed), 1, ORIGIN, w)
        except SKIP:
            continue
        assert 0.0 <= drift.mean_drift <= drift.max_drift <= 1.0
        assert drift.leaves > 0
        return
    pytest.fail("no labelable realization in 30 seeds")


@pytest.mark.parametrize("seed", range(5))
def test_five_member_class_pairwise_monotone(seed):
    w = Window(ORIGIN, 12)
    cells = [Vertex(x, y) for x in range(-3, 4) for y in range(-3, 4)]
    picks = random.Random(seed).sample(cells, 5)
    partition = _hand_partition(w, {v: 0 for v in picks}, [picks[0], Vertex(9, 9)])
    labeling = averaged_labels(_field(seed), partition, 0, w)

    star = labeling.reference_leaf
    leaves = sorted({g for m in labeling.members for g in m.cumulative.order}, key=lambda g: w.boundary_offset(g, star))
    values = np.array([labeling.average_at(g) for g in leaves])
    for i in range(len(values)):
        assert (values[i:] >= values[i] - 1e-12).all()
    for m in labeling.members:
        along = [labeling.average_at(p.leaf) for p in paths_of(m)]
        assert along == sorted(along)
        assert m.cumulative.order[-1] == star


@pytest.mark.parametrize("seed", range(2))
def test_label_of_path_on_random_paths(seed):
    w = Window(ORIGIN, 12)
    members = {Vertex(x, y): 0 for x in (-1, 0, 1) for y in (-1, 0, 1)}
    partition = _hand_partition(w, members, [ORIGIN, Vertex(9, 9)])
    labeling = averaged_labels(_field(seed), partition, 0, w)
    rng = random.Random(seed)
    for _ in range(500):
        m = rng.choice(labeling.members)
        tree = m.flow.tree
        ref = tree.path_to(labeling.reference_leaf)
        p, q = (tree.path_to(g) for g in rng.sample(m.cumulative.order, 2))
        for path in (p, q):
            F = label_of_path(labeling, path)
            assert F == min(m.phi[w.index(v)] for v in path.vertices[1:])
            assert F == m.phi[w.index(path.leaf)] == labeling.label(m.root, path.leaf)
        if ccw_compare(p, q, ref) < 0:
            assert label_of_path(labeling, p) <= label_of_path(labeling, q)


@pytest.mark.slow
def test_labeling_acceptance_level_two():
    w = Window(ORIGIN, 64)
    labeled = 0
    for seed in range(400):
        try:
            partition = voronoi_partition(VertexNoise(seed), 2, w)
            labeling = averaged_labels(_field(seed), partition, partition.class_of(ORIGIN), w, threads=4)
        except SKIP:
            continue
        assert leaf_order_consistent(labeling)
        for m in labeling.members:
            assert m.flow.conservation_error() <= 1e-9
            assert phi_monotone(m)
        labeled += 1
        if labeled == 100:
            return
    pytest.fail(f"only {labeled} labelable realizations in 400 seeds")
