# fpp_analysis/labeling.py
"""
Flow-based labels of geodesics at a finite level.

A unit of mass enters at the tree root and splits equally among children;
the window boundary plays the role of infinity, so the tree is truncated at
its first boundary contact and branches that never reach the boundary carry
no mass. Leaves are ordered counterclockwise starting just after a reference
path; the cumulative mass in that order is a member's label curve.

At level i vertex noise picks the sites S_i = {xi <= 4^-i}; every vertex joins
the class of its l1-nearest site (ties: smaller xi). A class labels leaves
with the mean of its members' curves, read off by boundary position relative
to the class reference leaf.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from fpp_core.errors import CostGuardError, DomainError, RetryNeeded
from fpp_core.lattice import Edge, LatticePath, Vertex, Window, ccw_sorted
from fpp_core.metric import GeodesicTree, WindowWeights, shortest_path_tree
from fpp_core.weights import VertexNoise

logger = logging.getLogger(__name__)

DEFAULT_CLASS_CAP = 64
COALESCE_EDGES = 2
ORDER_CAVEAT = (
    "cross-root order is read on the window boundary; paths that would "
    "separate only outside the window may be misordered"
)


# ---------------- flows ---------------- #


@dataclass(frozen=True, eq=False)
class TreeFlow:
    """
    Unit flow on the boundary-truncated tree. `mass[i]` is the mass on the
    edge into vertex i (1.0 at the root); `leaves` are the boundary vertices
    reached, in breadth-first order.
    """

    tree: GeodesicTree
    mass: Dict[int, float]
    leaves: Tuple[int, ...]

    @property
    def root(self) -> Vertex:
        return self.tree.source

    @property
    def leaf_vertices(self) -> List[Vertex]:
        return [self.tree.window.vertex(i) for i in self.leaves]

    def is_leaf(self, v: Vertex) -> bool:
        return self.tree.window.contains(v) and self.tree.window.index(v) in set(self.leaves)

    def mass_at(self, v: Vertex) -> float:
        return self.mass.get(self.tree.window.index(v), 0.0)

    def edge_masses(self) -> Dict[Edge, float]:
        window = self.tree.window
        root = window.index(self.root)
        return {
            Edge.between(window.vertex(int(self.tree.parent[i])), window.vertex(i)): m
            for i, m in self.mass.items()
            if i != root
        }

    def total_leaf_mass(self) -> float:
        return math.fsum(self.mass[i] for i in self.leaves)

    def conservation_error(self) -> float:
        """Largest |inflow - outflow| over carrying non-leaf vertices."""
        out: Dict[int, float] = {}
        root = self.tree.window.index(self.root)
        for i, m in self.mass.items():
            if i != root:
                p = int(self.tree.parent[i])
                out[p] = out.get(p, 0.0) + m
        leaves = set(self.leaves)
        worst = 0.0
        for i, m in self.mass.items():
            if i not in leaves:
                worst = max(worst, abs(m - out.get(i, 0.0)))
        return worst


def unit_flow(tree: GeodesicTree) -> TreeFlow:
    window = tree.window
    boundary = window.boundary_mask()
    root = window.index(tree.source)
    if boundary[root]:
        raise DomainError(f"root {tuple(tree.source)} lies on the window boundary")

    order = [root]
    i = 0
    while i < len(order):
        u = order[i]
        i += 1
        if u == root or not boundary[u]:
            order.extend(tree.children.get(u, ()))

    alive = set()
    for u in reversed(order):
        if boundary[u] or any(c in alive for c in tree.children.get(u, ())):
            alive.add(u)

    mass = {root: 1.0}
    for u in order:
        if u not in alive or (u != root and boundary[u]):
            continue
        kids = [c for c in tree.children.get(u, ()) if c in alive]
        share = mass[u] / len(kids)
        for c in kids:
            mass[c] = share
    leaves = tuple(u for u in order if u != root and boundary[u])
    return TreeFlow(tree, mass, leaves)


def reference_path(flow: TreeFlow, angle: float = 0.0) -> LatticePath:
    """Tree path to the flow leaf seen from the root closest to `angle` (0 = east)."""
    if not flow.leaves:
        raise DomainError("flow has no boundary leaves")
    window = flow.tree.window
    rx, ry = flow.root

    def key(v: Vertex) -> Tuple[float, int]:
        gap = abs((math.atan2(v[1] - ry, v[0] - rx) - angle + math.pi) % (2 * math.pi) - math.pi)
        return gap, window.boundary_position(v)

    return flow.tree.path_to(min(flow.leaf_vertices, key=key))


@dataclass(frozen=True)
class CumulativeFlow:
    root: Vertex
    reference_leaf: Vertex
    order: Tuple[Vertex, ...]
    masses: Tuple[float, ...]
    values: Tuple[float, ...]

    def value(self, leaf: Vertex) -> float:
        try:
            return self.values[self.order.index(Vertex(*leaf))]
        except ValueError:
            raise DomainError(f"{tuple(leaf)} is not a leaf of this flow") from None

    def as_dict(self) -> Dict[Vertex, float]:
        return dict(zip(self.order, self.values))


def cumulative_flow(flow: TreeFlow, reference: LatticePath) -> CumulativeFlow:
    """
    Prefix sums of leaf masses counterclockwise from just above the reference.
    The reference leaf is the cyclic maximum and gets exactly 1.
    """
    tree = flow.tree
    if reference.root != tree.source or not flow.is_leaf(reference.leaf):
        raise DomainError("reference must run from the root to a flow leaf")
    if tree.path_to(reference.leaf) != LatticePath(reference.vertices, geodesic=True):
        raise DomainError("reference path is not a path of the tree")

    paths = ccw_sorted([tree.path_to(v) for v in flow.leaf_vertices], reference)
    masses = [flow.mass_at(p.leaf) for p in paths]
    values = np.minimum(np.cumsum(masses), 1.0)
    values[-1] = 1.0
    return CumulativeFlow(
        root=tree.source,
        reference_leaf=reference.leaf,
        order=tuple(p.leaf for p in paths),
        masses=tuple(masses),
        values=tuple(values.tolist()),
    )


# ---------------- Voronoi classes ---------------- #


@dataclass(frozen=True, eq=False)
class VoronoiPartition:
    level: int
    window: Window
    sites: Tuple[Vertex, ...]
    site_xi: Tuple[float, ...]
    assignment: np.ndarray
    distance: np.ndarray

    @property
    def realized(self) -> int:
        return len(self.sites)

    @property
    def class_count(self) -> int:
        return len(self.sites)

    def class_of(self, v: Vertex) -> int:
        return int(self.assignment[self.window.index(self.window.require(v))])

    def site_of(self, v: Vertex) -> Vertex:
        return self.sites[self.class_of(v)]

    def members(self, class_id: int) -> List[Vertex]:
        if not 0 <= class_id < len(self.sites):
            raise DomainError(f"class id {class_id} out of range 0..{len(self.sites) - 1}")
        return [self.window.vertex(i) for i in np.nonzero(self.assignment == class_id)[0].tolist()]

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=len(self.sites))

    def disagreement_fraction(self) -> float:
        """Share of adjacent window pairs whose endpoints lie in different classes."""
        grid = self.assignment.reshape(self.window.side, self.window.side)
        h = grid[:, 1:] != grid[:, :-1]
        v = grid[1:, :] != grid[:-1, :]
        return float(h.sum() + v.sum()) / float(h.size + v.size)


def _site_threshold(level: int) -> float:
    if level < 1:
        raise DomainError(f"level must be a positive integer, got {level}")
    return 4.0 ** (-level)


def _sites(noise: VertexNoise, level: int, window: Window) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    xi = noise.uniforms(window)
    mask = xi <= _site_threshold(level)
    if not mask.any():
        raise RetryNeeded(f"no level-{level} sites in {window.describe()}", realized=0)
    rows, cols = np.nonzero(mask)
    # lexicographic (x, y) numbering of the sites
    order = np.lexsort((rows, cols))
    return xi, rows[order], cols[order]


def voronoi_partition(noise: VertexNoise, level: int, window: Window) -> VoronoiPartition:
    """
    Layered multi-source BFS: a vertex first reached at depth d takes the
    smallest-xi owner among its depth d-1 neighbours, which is the smallest-xi
    site at l1 distance d. Boxes are l1-convex, so depth equals l1 distance.
    """
    xi, rows, cols = _sites(noise, level, window)
    shape = xi.shape
    owner = np.full(shape, -1, dtype=np.int64)
    best = np.full(shape, np.inf)
    depth = np.full(shape, -1, dtype=np.int64)
    owner[rows, cols] = np.arange(rows.size)
    best[rows, cols] = xi[rows, cols]
    depth[rows, cols] = 0

    d = 0
    while (depth < 0).any():
        front = np.where(depth == d, best, np.inf)
        cand = np.full((4,) + shape, np.inf)
        who = np.full((4,) + shape, -1, dtype=np.int64)
        cand[0, :, :-1], who[0, :, :-1] = front[:, 1:], owner[:, 1:]
        cand[1, :, 1:], who[1, :, 1:] = front[:, :-1], owner[:, :-1]
        cand[2, :-1, :], who[2, :-1, :] = front[1:, :], owner[1:, :]
        cand[3, 1:, :], who[3, 1:, :] = front[:-1, :], owner[:-1, :]
        k = np.argmin(cand, axis=0)[None]
        got = np.take_along_axis(cand, k, axis=0)[0]
        new = (depth < 0) & np.isfinite(got)
        best[new] = got[new]
        owner[new] = np.take_along_axis(who, k, axis=0)[0][new]
        d += 1
        depth[new] = d

    sites = tuple(Vertex(window.x_min + int(c), window.y_min + int(r)) for r, c in zip(rows, cols))
    logger.debug("level %d: %d sites in %s", level, len(sites), window.describe())
    return VoronoiPartition(
        level=level,
        window=window,
        sites=sites,
        site_xi=tuple(float(xi[r, c]) for r, c in zip(rows, cols)),
        assignment=owner.ravel(),
        distance=depth.ravel(),
    )


def voronoi_bruteforce(noise: VertexNoise, level: int, window: Window) -> np.ndarray:
    """Class id per vertex by scanning every site; O(|window| * |S_i|)."""
    xi, rows, cols = _sites(noise, level, window)
    rr, cc = np.indices(xi.shape)
    best_d = np.full(xi.shape, np.iinfo(np.int64).max)
    best_xi = np.full(xi.shape, np.inf)
    owner = np.full(xi.shape, -1, dtype=np.int64)
    for k, (r, c) in enumerate(zip(rows, cols)):
        dist = np.abs(rr - r) + np.abs(cc - c)
        better = (dist < best_d) | ((dist == best_d) & (xi[r, c] < best_xi))
        best_d[better] = dist[better]
        best_xi[better] = xi[r, c]
        owner[better] = k
    return owner.ravel()


# ---------------- class averaging ---------------- #


@dataclass(frozen=True, eq=False)
class MemberLabels:
    root: Vertex
    flow: TreeFlow
    cumulative: CumulativeFlow
    offsets: np.ndarray
    curve: np.ndarray
    phi: Dict[int, float]
    labels: Dict[Vertex, float]

    def own_value(self, offset: int) -> float:
        """sup of this member's cumulative flow over its leaves at or before `offset`."""
        j = int(np.searchsorted(self.offsets, offset, side="right")) - 1
        return float(self.curve[j]) if j >= 0 else 0.0


@dataclass(frozen=True, eq=False)
class AveragedLabeling:
    level: int
    class_id: int
    site: Vertex
    reference_leaf: Vertex
    window: Window
    members: Tuple[MemberLabels, ...]
    dropped: Tuple[Vertex, ...]
    averaging_error: float
    coalescence_discrepancy: float
    notes: Tuple[str, ...]

    def member(self, root: Vertex) -> MemberLabels:
        for m in self.members:
            if m.root == Vertex(*root):
                return m
        raise DomainError(f"{tuple(root)} is not a labeled member of class {self.class_id}")

    def average_at(self, leaf: Vertex) -> float:
        """M^i at a boundary vertex."""
        o = self.window.boundary_offset(leaf, self.reference_leaf)
        return float(np.mean([m.own_value(o) for m in self.members]))

    def label(self, root: Vertex, leaf: Vertex) -> float:
        labels = self.member(root).labels
        if Vertex(*leaf) not in labels:
            raise DomainError(f"{tuple(leaf)} is not a leaf of the tree at {tuple(root)}")
        return labels[Vertex(*leaf)]

    def to_rows(self, seed: int) -> List[Dict[str, object]]:
        rows = []
        for m in self.members:
            window = m.flow.tree.window
            for leaf, own in zip(m.cumulative.order, m.cumulative.values):
                i = window.index(leaf)
                rows.append(
                    {
                        "seed": seed,
                        "level": self.level,
                        "class_id": self.class_id,
                        "root": f"{m.root.x};{m.root.y}",
                        "leaf": f"{leaf.x};{leaf.y}",
                        "mass": m.flow.mass[i],
                        "M": own,
                        "phi_terminal": m.phi[i],
                        "F": m.labels[leaf],
                    }
                )
        return rows


def references_coalesce(path: LatticePath, reference: LatticePath, k: int = COALESCE_EDGES) -> bool:
    """Both paths end in the same last k edges (all of the reference's edges when it is shorter)."""
    k = min(k, reference.steps)
    if k == 0 or path.steps < k:
        return False
    return path.edges()[-k:] == reference.edges()[-k:]


def _member_curve(
    field: WindowWeights, root: Vertex, window: Window, site_ref: LatticePath, angle: float
) -> Optional[Tuple[TreeFlow, CumulativeFlow, np.ndarray, np.ndarray]]:
    star = site_ref.leaf
    tree = shortest_path_tree(field, root, window)
    flow = unit_flow(tree)
    if not flow.is_leaf(star):
        return None
    ref = tree.path_to(star)
    if not references_coalesce(ref, site_ref):
        return None
    cf = cumulative_flow(flow, ref)
    offsets = np.array([window.boundary_offset(v, star) for v in cf.order], dtype=np.int64)
    order = np.argsort(offsets, kind="stable")
    curve = np.maximum.accumulate(np.asarray(cf.values)[order])
    return flow, cf, offsets[order], curve


def _encode(flow: TreeFlow, leaf_value: Dict[int, float]) -> Dict[int, float]:
    """phi on every carrying edge: max of the leaf values below it (0 if none)."""
    tree = flow.tree
    root = tree.window.index(flow.root)
    phi = {i: leaf_value.get(i, 0.0) for i in flow.mass}
    # children before parents: deeper vertices have strictly larger distance
    for i in sorted(flow.mass, key=lambda j: tree.dist[j], reverse=True):
        if i != root:
            p = int(tree.parent[i])
            if p != root:
                phi[p] = max(phi[p], phi[i])
    phi.pop(root, None)
    return phi


def averaged_labels(
    field: WindowWeights,
    partition: VoronoiPartition,
    root_class: int,
    window: Window,
    cap: int = DEFAULT_CLASS_CAP,
    reference_angle: float = 0.0,
    threads: int = 1,
) -> AveragedLabeling:
    members = partition.members(root_class)
    if len(members) > cap:
        raise CostGuardError(f"class {root_class} has {len(members)} members, cap is {cap}")
    site = partition.sites[root_class]
    if not window.contains(site) or window.is_boundary(site):
        raise DomainError(f"class site {tuple(site)} must be interior to {window.describe()}")

    site_flow = unit_flow(shortest_path_tree(field, site, window))
    site_ref = reference_path(site_flow, reference_angle)
    star = site_ref.leaf

    interior = [u for u in members if window.contains(u) and not window.is_boundary(u)]
    dropped = [u for u in members if window.is_boundary(u) or not window.contains(u)]

    def compute(u: Vertex):
        return _member_curve(field, u, window, site_ref, reference_angle)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(compute, interior))
    else:
        results = [compute(u) for u in interior]

    kept = []
    for u, res in zip(interior, results):
        if res is None:
            dropped.append(u)
        else:
            kept.append((u, res))
    if len(dropped) > 0:
        logger.warning("class %d: %d of %d members dropped (boundary root or non-coalescing reference)",
                       root_class, len(dropped), len(members))
    if not kept:
        raise RetryNeeded(f"no member of class {root_class} has a coalescing reference", realized=0)

    curves = [(offs, curve) for _, (_, _, offs, curve) in kept]

    def averaged(o: np.ndarray) -> np.ndarray:
        acc = np.zeros(o.shape)
        for offs, curve in curves:
            j = np.searchsorted(offs, o, side="right") - 1
            acc += np.where(j >= 0, curve[np.maximum(j, 0)], 0.0)
        return acc / len(curves)

    labeled = []
    seen: Dict[Vertex, List[float]] = {}
    for u, (flow, cf, offs, curve) in kept:
        leaf_offsets = np.array([window.boundary_offset(v, star) for v in cf.order], dtype=np.int64)
        values = averaged(leaf_offsets)
        leaf_value = {window.index(v): float(val) for v, val in zip(cf.order, values)}
        phi = _encode(flow, leaf_value)
        labels = {v: phi[window.index(v)] for v in cf.order}
        labeled.append(MemberLabels(u, flow, cf, offs, curve, phi, labels))
        for v, own in zip(cf.order, cf.values):
            seen.setdefault(v, []).append(own)

    shared = {v: vals for v, vals in seen.items() if len(vals) > 1}
    averaging_error = max((max(v) - min(v) for v in shared.values()), default=0.0)
    discrepancy = 0.0
    for v in shared:
        Fs = [m.labels[v] for m in labeled if v in m.labels]
        discrepancy = max(discrepancy, max(Fs) - min(Fs))

    return AveragedLabeling(
        level=partition.level,
        class_id=root_class,
        site=site,
        reference_leaf=star,
        window=window,
        members=tuple(labeled),
        dropped=tuple(dropped),
        averaging_error=float(averaging_error),
        coalescence_discrepancy=float(discrepancy),
        notes=(ORDER_CAVEAT,),
    )


def label_of_path(labeling: AveragedLabeling, path: LatticePath) -> float:
    """min of phi over the path's edges; the path must run from a member root down its tree."""
    member = labeling.member(path.root)
    tree = member.flow.tree
    window = tree.window
    if path.steps == 0:
        raise DomainError("a labeled path needs at least one edge")
    best = math.inf
    for a, b in zip(path.vertices, path.vertices[1:]):
        if not window.contains(b) or tree.parent_of(b) != a:
            raise DomainError(f"edge {tuple(a)}->{tuple(b)} is not in the tree at {tuple(path.root)}")
        i = window.index(b)
        if i not in member.phi:
            raise DomainError(f"edge {tuple(a)}->{tuple(b)} carries no flow")
        best = min(best, member.phi[i])
    return best


# ---------------- cross-level drift ---------------- #


@dataclass(frozen=True)
class LabelDrift:
    root: Vertex
    level: int
    max_drift: float
    mean_drift: float
    leaves: int


def label_drift(
    field: WindowWeights,
    noise: VertexNoise,
    level: int,
    root: Vertex,
    window: Window,
    cap: int = DEFAULT_CLASS_CAP,
    reference_angle: float = 0.0,
) -> LabelDrift:
    """|F_{i+1} - F_i| over the root's leaves."""
    per_level = []
    for i in (level, level + 1):
        partition = voronoi_partition(noise, i, window)
        labeling = averaged_labels(field, partition, partition.class_of(root), window, cap, reference_angle)
        per_level.append(labeling.member(root).labels)
    first, second = per_level
    diffs = np.array([abs(second[v] - first[v]) for v in first])
    return LabelDrift(Vertex(*root), level, float(diffs.max()), float(diffs.mean()), int(diffs.size))


def leaf_order_consistent(labeling: AveragedLabeling, tol: float = 1e-12) -> bool:
    """g <= g' in boundary order implies F(g) <= F(g'), across every member of the class."""
    pts: List[Tuple[int, float]] = []
    for m in labeling.members:
        for leaf, F in m.labels.items():
            pts.append((labeling.window.boundary_offset(leaf, labeling.reference_leaf), F))
    pts.sort()
    return all(b[1] >= a[1] - tol for a, b in zip(pts, pts[1:]))


def phi_monotone(member: MemberLabels, tol: float = 0.0) -> bool:
    """phi is nonincreasing along every carrying root-to-leaf path."""
    tree = member.flow.tree
    root = tree.window.index(member.root)
    for i, value in member.phi.items():
        p = int(tree.parent[i])
        if p != root and value > member.phi[p] + tol:
            return False
    return True


def paths_of(member: MemberLabels) -> Sequence[LatticePath]:
    return [member.flow.tree.path_to(v) for v in member.cumulative.order]
