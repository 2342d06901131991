# fpp_core/metric.py
"""
First-passage metric on a finite window: single-source geodesic trees,
geodesics, the half-plane restricted metric, a truncation diagnostic and two
brute-force oracles for small instances.

Tie-break: when several neighbours u of v satisfy dist(u) + w(u, v) == dist(v)
to the last bit (and dist(u) < dist(v)), the one whose connecting edge has
the smallest edge id becomes parent(v).

Tree cache layout (little endian):
    header  "<4sHqqqqqQ"  magic b"FPPT", version, source x, source y,
                          window center x, center y, half-width, vertex count
    records count x (float64 dist, uint8 parent direction)
            direction: 0=E 1=N 2=W 3=S from the vertex to its parent, 255 = none
    records follow the window's row-major vertex order.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Dict, Iterator, List, Literal, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import DomainError, FPPError
from .lattice import (
    Direction,
    Edge,
    HalfPlane,
    LatticePath,
    Vertex,
    Window,
    edge_ids,
)
from .weights import EdgeWeightField

logger = logging.getLogger(__name__)

NO_EDGE = np.iinfo(np.uint64).max
_HEADER = struct.Struct("<4sHqqqqqQ")
_MAGIC = b"FPPT"
_RECORD = np.dtype([("dist", "<f8"), ("dir", "u1")])


class WindowWeights(Protocol):
    def window_weights(self, window: Window) -> Tuple[np.ndarray, np.ndarray]: ...

    def weight(self, e: Edge) -> float: ...


@dataclass(frozen=True)
class RestrictedField:
    """Base weights with every edge leaving the half-plane set to +inf."""

    base: EdgeWeightField
    halfplane: HalfPlane

    def weight(self, e: Edge) -> float:
        a, b = e.endpoints
        if self.halfplane.contains(a) and self.halfplane.contains(b):
            return self.base.weight(e)
        return math.inf

    def window_weights(self, window: Window) -> Tuple[np.ndarray, np.ndarray]:
        h, v = self.base.window_weights(window)
        inside = self.halfplane.mask(window).reshape(window.side, window.side)
        h = np.where(inside[:, :-1] & inside[:, 1:], h, np.inf)
        v = np.where(inside[:-1, :] & inside[1:, :], v, np.inf)
        return h, v


# ---------------- adjacency ---------------- #


@lru_cache(maxsize=16)
def _window_edge_ids(window: Window) -> Tuple[np.ndarray, np.ndarray]:
    xs, ys = window.coordinates()
    return edge_ids(xs[:, :-1], ys[:, :-1], vertical=False), edge_ids(xs[:-1, :], ys[:-1, :], vertical=True)


def _adjacency(field: WindowWeights, window: Window) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(neighbour index, weight, edge id), each shaped (4, N) in E, N, W, S order."""
    side = window.side
    n = window.size
    h, v = field.window_weights(window)
    h_ids, v_ids = _window_edge_ids(window)
    idx = np.arange(n, dtype=np.int64).reshape(side, side)
    nbr = np.full((4, side, side), -1, dtype=np.int64)
    w = np.full((4, side, side), np.inf)
    eid = np.full((4, side, side), NO_EDGE, dtype=np.uint64)

    nbr[0, :, :-1], w[0, :, :-1], eid[0, :, :-1] = idx[:, 1:], h, h_ids
    nbr[1, :-1, :], w[1, :-1, :], eid[1, :-1, :] = idx[1:, :], v, v_ids
    nbr[2, :, 1:], w[2, :, 1:], eid[2, :, 1:] = idx[:, :-1], h, h_ids
    nbr[3, 1:, :], w[3, 1:, :], eid[3, 1:, :] = idx[:-1, :], v, v_ids

    excluded = ~np.isfinite(w)
    nbr[excluded] = -1
    return nbr.reshape(4, n), w.reshape(4, n), eid.reshape(4, n)


def _tie_broken_parents(
    nbr: np.ndarray, w: np.ndarray, eid: np.ndarray, dist: np.ndarray, fallback: np.ndarray, src: int
) -> np.ndarray:
    n = dist.size
    safe = np.where(nbr >= 0, nbr, 0)
    nd = dist[safe]
    tight = (nbr >= 0) & np.isfinite(nd) & (nd + w == dist[None, :]) & (nd < dist[None, :])
    best = np.argmin(np.where(tight, eid, NO_EDGE), axis=0)
    parent = np.where(tight.any(axis=0), nbr[best, np.arange(n)], -1)
    # float absorption (w below one ulp of dist) leaves no strictly closer tight neighbour
    stray = (parent < 0) & np.isfinite(dist)
    parent[stray] = fallback[stray]
    parent[src] = -1
    return parent.astype(np.int64)


# ---------------- trees ---------------- #


@dataclass(frozen=True, eq=False)
class GeodesicTree:
    """
    Shortest-path tree of one source over a window. `dist` and `parent` are
    indexed by the window's row-major vertex index; unreached vertices carry
    dist = inf and parent = -1.
    """

    source: Vertex
    window: Window
    dist: np.ndarray
    parent: np.ndarray

    @classmethod
    def from_parent_map(
        cls,
        source: Vertex,
        window: Window,
        parents: Dict[Vertex, Vertex],
        dist: Optional[Dict[Vertex, float]] = None,
    ) -> "GeodesicTree":
        """Build a tree from explicit parent pointers; distances default to hop counts."""
        n = window.size
        parent = np.full(n, -1, dtype=np.int64)
        d = np.full(n, np.inf)
        d[window.index(source)] = 0.0
        for child, par in parents.items():
            window.require(child)
            window.require(par)
            Edge.between(par, child)
            parent[window.index(child)] = window.index(par)

        def hops(v: Vertex) -> int:
            count = 0
            i = window.index(v)
            while parent[i] >= 0:
                i = parent[i]
                count += 1
                if count > n:
                    raise DomainError("parent map contains a cycle")
            if i != window.index(source):
                raise DomainError(f"{tuple(v)} does not descend from the source")
            return count

        for child in parents:
            d[window.index(child)] = float(dist[child]) if dist else float(hops(child))
        return cls(Vertex(*source), window, d, parent)

    def index(self, v: Vertex) -> int:
        self.window.require(v)
        return self.window.index(v)

    def reached(self, v: Vertex) -> bool:
        return self.window.contains(v) and bool(np.isfinite(self.dist[self.window.index(v)]))

    def distance(self, v: Vertex) -> float:
        return float(self.dist[self.index(v)])

    def parent_of(self, v: Vertex) -> Optional[Vertex]:
        p = int(self.parent[self.index(v)])
        return None if p < 0 else self.window.vertex(p)

    def path_to(self, v: Vertex) -> LatticePath:
        i = self.index(v)
        if not np.isfinite(self.dist[i]):
            raise DomainError(f"{tuple(v)} is not reached from {tuple(self.source)}")
        chain = [i]
        while self.parent[chain[-1]] >= 0:
            chain.append(int(self.parent[chain[-1]]))
            if len(chain) > self.window.size:
                raise FPPError("parent pointers form a cycle")
        return LatticePath(tuple(self.window.vertex(j) for j in reversed(chain)), geodesic=True)

    @cached_property
    def children(self) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {}
        for child in np.nonzero(self.parent >= 0)[0].tolist():
            out.setdefault(int(self.parent[child]), []).append(child)
        return out

    def edges(self) -> Iterator[Tuple[Vertex, Vertex]]:
        for child in np.nonzero(self.parent >= 0)[0].tolist():
            yield self.window.vertex(int(self.parent[child])), self.window.vertex(child)

    @property
    def reached_count(self) -> int:
        return int(np.isfinite(self.dist).sum())

    # ---- cache codec ---- #

    def to_bytes(self) -> bytes:
        side = self.window.side
        n = self.window.size
        delta = self.parent - np.arange(n)
        direction = np.full(n, 255, dtype=np.uint8)
        has = self.parent >= 0
        direction[has & (delta == 1)] = Direction.E
        direction[has & (delta == side)] = Direction.N
        direction[has & (delta == -1)] = Direction.W
        direction[has & (delta == -side)] = Direction.S
        records = np.empty(n, dtype=_RECORD)
        records["dist"] = self.dist
        records["dir"] = direction
        header = _HEADER.pack(
            _MAGIC, 1, self.source.x, self.source.y,
            self.window.center.x, self.window.center.y, self.window.half_width, n,
        )
        return header + records.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GeodesicTree":
        magic, version, sx, sy, cx, cy, half, n = _HEADER.unpack_from(blob, 0)
        if magic != _MAGIC or version != 1:
            raise DomainError("not a geodesic tree blob")
        window = Window(Vertex(cx, cy), half)
        if n != window.size:
            raise DomainError("vertex count does not match the window")
        records = np.frombuffer(blob, dtype=_RECORD, count=n, offset=_HEADER.size)
        offsets = np.array([1, window.side, -1, -window.side, 0], dtype=np.int64)
        direction = records["dir"].astype(np.int64)
        code = np.where(direction == 255, 4, direction)
        parent = np.where(direction == 255, -1, np.arange(n) + offsets[code])
        return cls(Vertex(sx, sy), window, records["dist"].copy(), parent.astype(np.int64))


@dataclass(frozen=True)
class GeodesicSegment:
    path: LatticePath
    weight: float

    def edge_sum(self, field: WindowWeights) -> float:
        total = 0.0
        for e in self.path.edges():
            total += field.weight(e)
        return total


def shortest_path_tree(field: WindowWeights, source: Vertex, window: Window) -> GeodesicTree:
    """Exact single-source shortest paths over the window's induced subgraph."""
    if not window.contains(source):
        raise DomainError(f"source {tuple(source)} outside window {window.describe()}")
    n = window.size
    src = window.index(source)
    nbr, w, eid = _adjacency(field, window)
    valid = nbr >= 0
    rows = np.nonzero(valid)[1]
    graph = csr_matrix((w[valid], (rows, nbr[valid])), shape=(n, n))
    dist, pred = dijkstra(graph, directed=True, indices=src, return_predecessors=True)
    fallback = np.where(pred >= 0, pred, -1).astype(np.int64)
    parent = _tie_broken_parents(nbr, w, eid, dist, fallback, src)
    return GeodesicTree(Vertex(*source), window, dist, parent)


def halfplane_tree(restricted: RestrictedField, source: Vertex, window: Window) -> GeodesicTree:
    if not restricted.halfplane.contains(source):
        raise DomainError(f"source {tuple(source)} outside half-plane H_{restricted.halfplane.index}")
    return shortest_path_tree(restricted, source, window)


def geodesic(field: WindowWeights, x: Vertex, y: Vertex, window: Window) -> GeodesicSegment:
    window.require(y, "target")
    tree = shortest_path_tree(field, x, window)
    if not tree.reached(y):
        raise FPPError(f"{tuple(y)} unreachable from {tuple(x)} inside {window.describe()}")
    return GeodesicSegment(tree.path_to(y), tree.distance(y))


def passage_time(field: WindowWeights, x: Vertex, y: Vertex, window: Window) -> float:
    return geodesic(field, x, y, window).weight


# ---------------- truncation diagnostic ---------------- #


@dataclass(frozen=True)
class StabilityReport:
    status: Literal["stable", "changed", "suspect"]
    small_weight: float
    large_weight: float
    touches_boundary: bool

    @property
    def stable(self) -> bool:
        return self.status == "stable"


def window_stability_check(
    field: WindowWeights, x: Vertex, y: Vertex, window_small: Window, window_large: Window
) -> StabilityReport:
    if not window_large.contains_window(window_small):
        raise DomainError("the small window must lie inside the large one")
    small = geodesic(field, x, y, window_small)
    large = geodesic(field, x, y, window_large)
    touches = any(window_small.is_boundary(v) for v in small.path)
    changed = small.path != large.path or small.weight != large.weight
    status = "changed" if changed else ("suspect" if touches else "stable")
    if status != "stable":
        logger.debug("geodesic %s -> %s %s between %s and %s", x, y, status,
                     window_small.describe(), window_large.describe())
    return StabilityReport(status, small.weight, large.weight, touches)


# ---------------- ball growth ---------------- #


def ball_mask(tree: GeodesicTree, t: float) -> np.ndarray:
    """{z : T(source, z) <= t} as a boolean vector over the window."""
    return tree.dist <= t


def ball(tree: GeodesicTree, t: float) -> List[Vertex]:
    return [tree.window.vertex(i) for i in np.nonzero(ball_mask(tree, t))[0].tolist()]


def ball_profile(tree: GeodesicTree, t: float, angles: Sequence[float]) -> List[float]:
    """Per direction, the largest radius r whose ray points up to r all lie in B(t), over t."""
    out = []
    L = tree.window.half_width
    sx, sy = tree.source
    for theta in angles:
        c, s = math.cos(theta), math.sin(theta)
        reach = 0
        for r in range(1, L + 1):
            v = Vertex(sx + round(r * c), sy + round(r * s))
            if not tree.window.contains(v) or tree.dist[tree.window.index(v)] > t:
                break
            reach = r
        out.append(reach / t if t > 0 else 0.0)
    return out


# ---------------- oracles ---------------- #


def bellman_ford_tree(field: WindowWeights, source: Vertex, window: Window) -> GeodesicTree:
    """Plain |V|-1 rounds of edge relaxation, same tie-break; for small windows only."""
    if not window.contains(source):
        raise DomainError(f"source {tuple(source)} outside window {window.describe()}")
    n = window.size
    src = window.index(source)
    nbr, w, eid = _adjacency(field, window)
    nbr_l, w_l, eid_l = nbr.T.tolist(), w.T.tolist(), eid.T.tolist()
    dist = [math.inf] * n
    parent = [-1] * n
    parent_edge = [int(NO_EDGE)] * n
    dist[src] = 0.0
    for _ in range(n - 1):
        changed = False
        for u in range(n):
            du = dist[u]
            if du == math.inf:
                continue
            for d in range(4):
                v = nbr_l[u][d]
                if v < 0:
                    continue
                nd = du + w_l[u][d]
                e = eid_l[u][d]
                if nd < dist[v] or (v != src and nd == dist[v] and du < dist[v] and e < parent_edge[v]):
                    dist[v], parent[v], parent_edge[v] = nd, u, e
                    changed = True
        if not changed:
            break
    return GeodesicTree(Vertex(*source), window, np.array(dist), np.array(parent, dtype=np.int64))


@dataclass(frozen=True)
class ExhaustiveResult:
    path: Optional[LatticePath]
    weight: float
    minimizers: int
    explored: int


def exhaustive_geodesic(
    field: WindowWeights, x: Vertex, y: Vertex, window: Window, max_steps: int = 14, bound: float = math.inf
) -> ExhaustiveResult:
    """
    Minimum over all self-avoiding window paths x -> y of at most `max_steps`
    steps. Partial paths heavier than `bound` are pruned; paths tying the
    minimum are counted.
    """
    window.require(x)
    window.require(y)
    nbr, w, _ = _adjacency(field, window)
    nbr_l, w_l = nbr.T.tolist(), w.T.tolist()
    start, goal = window.index(x), window.index(y)
    side = window.side
    gr, gc = divmod(goal, side)

    best = {"weight": math.inf, "path": None, "count": 0, "explored": 0}
    on_path = [False] * window.size
    trail = [start]
    on_path[start] = True

    def search(u: int, total: float) -> None:
        best["explored"] += 1
        if u == goal:
            if total < best["weight"]:
                best.update(weight=total, path=list(trail), count=1)
            elif total == best["weight"]:
                best["count"] += 1
            return
        r, c = divmod(u, side)
        if len(trail) - 1 + abs(r - gr) + abs(c - gc) > max_steps:
            return
        for d in range(4):
            v = nbr_l[u][d]
            if v < 0 or on_path[v]:
                continue
            nt = total + w_l[u][d]
            if nt > best["weight"] or nt > bound:
                continue
            on_path[v] = True
            trail.append(v)
            search(v, nt)
            trail.pop()
            on_path[v] = False

    search(start, 0.0)
    path = None
    if best["path"] is not None:
        path = LatticePath(tuple(window.vertex(i) for i in best["path"]), geodesic=True)
    return ExhaustiveResult(path, best["weight"], best["count"], best["explored"])
