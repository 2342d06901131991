# fpp_core/lattice.py
"""
Geometry of the Z^2 nearest-neighbour lattice.

Vertices are (x, y) integer pairs, edges are stored in canonical form (lower
endpoint + orientation bit) and indexed by a 63-bit id built from zigzag
encoded, bit-interleaved coordinates. Windows are the finite boxes
center + [-L, L]^2 every computation runs on.

Supported coordinates: -2^30 <= x, y <= 2^30 - 1, which keeps edge ids below
2^63 and makes the id map injective.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum
from functools import cmp_to_key
from typing import Iterator, List, NamedTuple, Sequence, Tuple

import numpy as np

from .errors import BoundsError, DomainError

COORD_MIN = -(1 << 30)
COORD_MAX = (1 << 30) - 1

_STEPS: Tuple[Tuple[int, int], ...] = ((1, 0), (0, 1), (-1, 0), (0, -1))

# (shift, mask) pairs spreading a 32-bit value over the even bits of 64.
_SPREAD = (
    (16, 0x0000FFFF0000FFFF),
    (8, 0x00FF00FF00FF00FF),
    (4, 0x0F0F0F0F0F0F0F0F),
    (2, 0x3333333333333333),
    (1, 0x5555555555555555),
)


class Vertex(NamedTuple):
    x: int
    y: int


class Direction(IntEnum):
    E = 0
    N = 1
    W = 2
    S = 3

    @property
    def step(self) -> Tuple[int, int]:
        return _STEPS[self]

    def opposite(self) -> "Direction":
        return Direction((self + 2) % 4)


def step(v: Vertex, d: Direction) -> Vertex:
    dx, dy = _STEPS[d]
    return Vertex(v[0] + dx, v[1] + dy)


def neighbors(v: Vertex) -> List[Vertex]:
    """v + e1, v + e2, v - e1, v - e2 (E, N, W, S)."""
    return [step(v, d) for d in Direction]


def direction_between(a: Vertex, b: Vertex) -> Direction:
    delta = (b[0] - a[0], b[1] - a[1])
    try:
        return Direction(_STEPS.index(delta))
    except ValueError:
        raise DomainError(f"{tuple(a)} and {tuple(b)} are not lattice neighbours") from None


def check_range(v: Vertex) -> Vertex:
    if not (COORD_MIN <= v[0] <= COORD_MAX and COORD_MIN <= v[1] <= COORD_MAX):
        raise BoundsError(f"vertex {tuple(v)} outside supported range [{COORD_MIN}, {COORD_MAX}]")
    return Vertex(int(v[0]), int(v[1]))


class Edge(NamedTuple):
    """Canonical undirected edge: lower endpoint (x, y) and orientation."""

    x: int
    y: int
    vertical: bool

    @classmethod
    def between(cls, a: Vertex, b: Vertex) -> "Edge":
        d = direction_between(a, b)
        lo = min(Vertex(*a), Vertex(*b))
        return cls(lo.x, lo.y, d in (Direction.N, Direction.S))

    @property
    def endpoints(self) -> Tuple[Vertex, Vertex]:
        a = Vertex(self.x, self.y)
        return a, step(a, Direction.N if self.vertical else Direction.E)


# ---------------- ids ---------------- #


def _zigzag(v: int) -> int:
    return v << 1 if v >= 0 else ((-v) << 1) - 1


def _spread(v: int) -> int:
    v &= 0xFFFFFFFF
    for shift, mask in _SPREAD:
        v = (v | (v << shift)) & mask
    return v


def vertex_key(v: Vertex) -> int:
    """Interleaved zigzag code of a vertex (used to key per-vertex noise)."""
    x, y = check_range(v)
    return _spread(_zigzag(x)) | (_spread(_zigzag(y)) << 1)


def edge_id(e: Edge) -> int:
    a, b = e.endpoints
    check_range(b)
    return (vertex_key(a) << 1) | int(bool(e.vertical))


def _zigzag_array(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    return np.where(a >= 0, a << 1, ((-a) << 1) - 1).astype(np.uint64)


def _spread_array(v: np.ndarray) -> np.ndarray:
    v = v & np.uint64(0xFFFFFFFF)
    for shift, mask in _SPREAD:
        v = (v | (v << np.uint64(shift))) & np.uint64(mask)
    return v


def vertex_keys(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized `vertex_key`; callers guarantee the coordinate range."""
    return _spread_array(_zigzag_array(xs)) | (_spread_array(_zigzag_array(ys)) << np.uint64(1))


def edge_ids(xs: np.ndarray, ys: np.ndarray, vertical: bool) -> np.ndarray:
    """Vectorized `edge_id` for canonical edges with lower endpoints (xs, ys)."""
    return (vertex_keys(xs, ys) << np.uint64(1)) | np.uint64(1 if vertical else 0)


# ---------------- windows & half-planes ---------------- #


@dataclass(frozen=True)
class Window:
    center: Vertex
    half_width: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", Vertex(int(self.center[0]), int(self.center[1])))
        if int(self.half_width) < 1:
            raise DomainError(f"window half-width must be positive, got {self.half_width}")
        object.__setattr__(self, "half_width", int(self.half_width))
        # one unit of margin so every edge leaving the window is indexable
        cx, cy = self.center
        L = self.half_width + 1
        if cx - L < COORD_MIN or cx + L > COORD_MAX or cy - L < COORD_MIN or cy + L > COORD_MAX:
            raise BoundsError(f"window {self} exceeds the supported coordinate range")

    @property
    def side(self) -> int:
        return 2 * self.half_width + 1

    @property
    def size(self) -> int:
        return self.side * self.side

    @property
    def x_min(self) -> int:
        return self.center.x - self.half_width

    @property
    def x_max(self) -> int:
        return self.center.x + self.half_width

    @property
    def y_min(self) -> int:
        return self.center.y - self.half_width

    @property
    def y_max(self) -> int:
        return self.center.y + self.half_width

    @property
    def perimeter(self) -> int:
        return 8 * self.half_width

    def contains(self, v: Vertex) -> bool:
        return self.x_min <= v[0] <= self.x_max and self.y_min <= v[1] <= self.y_max

    def contains_window(self, other: "Window") -> bool:
        return (
            self.x_min <= other.x_min
            and other.x_max <= self.x_max
            and self.y_min <= other.y_min
            and other.y_max <= self.y_max
        )

    def require(self, v: Vertex, what: str = "vertex") -> Vertex:
        if not self.contains(v):
            raise BoundsError(f"{what} {tuple(v)} outside window {self.describe()}")
        return Vertex(int(v[0]), int(v[1]))

    def describe(self) -> str:
        return f"[{self.x_min},{self.x_max}]x[{self.y_min},{self.y_max}]"

    def index(self, v: Vertex) -> int:
        return (v[1] - self.y_min) * self.side + (v[0] - self.x_min)

    def vertex(self, i: int) -> Vertex:
        row, col = divmod(int(i), self.side)
        return Vertex(self.x_min + col, self.y_min + row)

    def vertices(self) -> Iterator[Vertex]:
        for i in range(self.size):
            yield self.vertex(i)

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """(xs, ys) grids of shape (side, side), indexed [row, col]."""
        cols = np.arange(self.x_min, self.x_max + 1, dtype=np.int64)
        rows = np.arange(self.y_min, self.y_max + 1, dtype=np.int64)
        xs, ys = np.meshgrid(cols, rows)
        return xs, ys

    def is_boundary(self, v: Vertex) -> bool:
        return self.contains(v) and (
            v[0] in (self.x_min, self.x_max) or v[1] in (self.y_min, self.y_max)
        )

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros((self.side, self.side), dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask.ravel()

    def boundary_position(self, v: Vertex) -> int:
        """Counterclockwise perimeter coordinate in [0, 8L), 0 at the lower-right corner."""
        if not self.is_boundary(v):
            raise DomainError(f"{tuple(v)} is not on the boundary of {self.describe()}")
        L = self.half_width
        x, y = v
        if x == self.x_max and y < self.y_max:
            return y - self.y_min
        if y == self.y_max and x > self.x_min:
            return 2 * L + (self.x_max - x)
        if x == self.x_min and y > self.y_min:
            return 4 * L + (self.y_max - y)
        return 6 * L + (x - self.x_min)

    def boundary_offset(self, v: Vertex, start: Vertex) -> int:
        """Position of v counted counterclockwise from just after `start`; start itself is last."""
        return (self.boundary_position(v) - self.boundary_position(start) - 1) % self.perimeter


_NORMALS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))


@dataclass(frozen=True)
class HalfPlane:
    """{v : (v - anchor) . (cos(i pi/4), sin(i pi/4)) >= 0}."""

    index: int
    anchor: Vertex = Vertex(0, 0)

    def __post_init__(self) -> None:
        if not 0 <= int(self.index) <= 7:
            raise DomainError(f"half-plane index must be in 0..7, got {self.index}")
        object.__setattr__(self, "anchor", Vertex(int(self.anchor[0]), int(self.anchor[1])))

    @property
    def normal(self) -> Tuple[float, float]:
        angle = self.index * math.pi / 4
        return math.cos(angle), math.sin(angle)

    def contains(self, v: Vertex) -> bool:
        # integer normals differ from the unit ones by a positive factor only
        nx, ny = _NORMALS[self.index]
        return nx * (v[0] - self.anchor.x) + ny * (v[1] - self.anchor.y) >= 0

    def mask(self, window: Window) -> np.ndarray:
        nx, ny = _NORMALS[self.index]
        xs, ys = window.coordinates()
        return (nx * (xs - self.anchor.x) + ny * (ys - self.anchor.y) >= 0).ravel()


# ---------------- paths & ordering ---------------- #


@dataclass(frozen=True)
class LatticePath:
    vertices: Tuple[Vertex, ...]
    geodesic: bool = False

    def __post_init__(self) -> None:
        vs = tuple(Vertex(int(v[0]), int(v[1])) for v in self.vertices)
        if not vs:
            raise DomainError("a path needs at least one vertex")
        for a, b in zip(vs, vs[1:]):
            direction_between(a, b)
        object.__setattr__(self, "vertices", vs)
        if self.geodesic and not self.is_self_avoiding():
            raise DomainError("geodesic candidate path revisits a vertex")

    def __len__(self) -> int:
        return len(self.vertices)

    def __iter__(self) -> Iterator[Vertex]:
        return iter(self.vertices)

    def __getitem__(self, i: int) -> Vertex:
        return self.vertices[i]

    @property
    def root(self) -> Vertex:
        return self.vertices[0]

    @property
    def leaf(self) -> Vertex:
        return self.vertices[-1]

    @property
    def steps(self) -> int:
        return len(self.vertices) - 1

    def edges(self) -> List[Edge]:
        return [Edge.between(a, b) for a, b in zip(self.vertices, self.vertices[1:])]

    def is_self_avoiding(self) -> bool:
        return len(set(self.vertices)) == len(self.vertices)

    def contains(self, v: Vertex) -> bool:
        return Vertex(*v) in set(self.vertices)

    def reversed(self) -> "LatticePath":
        return LatticePath(self.vertices[::-1], geodesic=self.geodesic)

    def to_json(self) -> str:
        return json.dumps([[v.x, v.y] for v in self.vertices])

    @classmethod
    def from_json(cls, text: str) -> "LatticePath":
        return cls(tuple(Vertex(int(x), int(y)) for x, y in json.loads(text)))


def _ccw_turns(origin: Direction, d: Direction) -> int:
    turns = (d - origin) % 4
    return turns or 4


def _reference_side(pv: Tuple[Vertex, ...], rv: Tuple[Vertex, ...], n: int) -> int:
    """0 if a path running along the reference past index n leaves it to the left, else 4."""
    j = n + 1
    limit = min(len(pv), len(rv))
    while j < limit and pv[j] == rv[j]:
        j += 1
    if j == len(pv) or j == len(rv):
        return 4
    u = pv[j - 1]
    origin = direction_between(u, rv[j])
    back = _ccw_turns(origin, direction_between(u, pv[j - 2]))
    return 0 if _ccw_turns(origin, direction_between(u, pv[j])) < back else 4


def ccw_compare(p: LatticePath, q: LatticePath, reference: LatticePath) -> int:
    """
    Counterclockwise order of two same-root paths relative to a reference path.

    Returns -1, 0 or 1. The comparison is decided at the divergence vertex w.
    If w lies on the reference the sweep starts at the reference's outgoing
    edge; a path that keeps following the reference goes before every other
    branch at w when it later leaves the reference to the left, and after them
    otherwise. The reference itself is last. Off the reference the sweep
    starts at the edge back to w's predecessor. Paths without a divergence
    vertex (equal, or one a prefix of the other) compare equal.
    """
    if p.root != q.root or p.root != reference.root:
        raise DomainError("ccw_compare needs paths sharing one root")
    pv, qv, rv = p.vertices, q.vertices, reference.vertices
    n = 0
    limit = min(len(pv), len(qv))
    while n < limit and pv[n] == qv[n]:
        n += 1
    if n == len(pv) or n == len(qv):
        return 0
    w = pv[n - 1]
    if len(rv) > n and rv[:n] == pv[:n]:
        origin = direction_between(w, rv[n])
        tp = _reference_side(pv, rv, n) if pv[n] == rv[n] else _ccw_turns(origin, direction_between(w, pv[n]))
        tq = _reference_side(qv, rv, n) if qv[n] == rv[n] else _ccw_turns(origin, direction_between(w, qv[n]))
        return (tp > tq) - (tp < tq)
    if n > 1:
        origin = direction_between(w, pv[n - 2])
    else:
        origin = Direction.E
    tp = _ccw_turns(origin, direction_between(w, pv[n]))
    tq = _ccw_turns(origin, direction_between(w, qv[n]))
    return (tp > tq) - (tp < tq)


def ccw_sorted(paths: Sequence[LatticePath], reference: LatticePath) -> List[LatticePath]:
    return sorted(paths, key=cmp_to_key(lambda a, b: ccw_compare(a, b, reference)))


def boundary_compare(p: LatticePath, q: LatticePath, start: Vertex, window: Window) -> int:
    """
    Order window-confined paths by where they reach the window boundary,
    moving counterclockwise from just after `start`. Roots may differ.
    """
    op = window.boundary_offset(p.leaf, start)
    oq = window.boundary_offset(q.leaf, start)
    return (op > oq) - (op < oq)
