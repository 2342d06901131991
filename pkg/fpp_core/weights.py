# fpp_core/weights.py
"""
The random environment: a seed-keyed, per-edge weight field.

Every value is a pure function of (seed, id). Generation is counter based:

    key    = mix64(seed ^ DOMAIN)
    bits   = mix64(mix64(id ^ key) + counter * COUNTER_GAMMA)
    u      = (bits >> 11) * 2^-53            in [0, 1)
    weight = inverse CDF of the distribution at u

with mix64 the splitmix64 finalizer. A weight of exactly zero is redrawn with
counter + 1. Edge ids come from `lattice.edge_id`, vertex ids from
`lattice.vertex_key`. Domain constants below keep the edge stream, the vertex
noise stream and trial seeding apart even under an identical seed.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import special, stats

from .errors import BoundsError, DegenerateInputError
from .lattice import Edge, Vertex, Window, check_range, edge_ids, vertex_keys

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
COUNTER_GAMMA = 0xD1B54A32D192ED03

EDGE_DOMAIN = 0x4544474557454947  # "EDGEWEIG"
VERTEX_DOMAIN = 0x564552544E4F4953  # "VERTNOIS"
TRIAL_DOMAIN = 0x545249414C534545  # "TRIALSEE"

MIXER_NAME = "splitmix64"

_TWO_POW_M53 = 1.0 / float(1 << 53)


def mix64(x: int) -> int:
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    """Same finalizer on uint64 arrays; wraparound is the intended modulus."""
    z = np.atleast_1d(np.asarray(z, dtype=np.uint64))
    z = z + np.uint64(GOLDEN_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise BoundsError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def keyed_uniforms(key: int, ids: np.ndarray, counter: int = 0) -> np.ndarray:
    ids = np.atleast_1d(np.asarray(ids, dtype=np.uint64))
    bits = mix64_array(mix64_array(ids ^ np.uint64(key)) + np.uint64((counter * COUNTER_GAMMA) & MASK64))
    return (bits >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53


def derive_trial_seed(master: int, trial_index: int) -> int:
    """Per-trial seed; a bijection of the index for a fixed master seed."""
    return mix64((mix64(_check_seed(master) ^ TRIAL_DOMAIN) + int(trial_index)) & MASK64)


# ---------------- distributions ---------------- #

_DIST_RE = re.compile(r"^\s*([A-Za-z_]+)\s*(?:\(([^)]*)\))?\s*$")
_ALIASES = {
    "exponential": "exponential",
    "exp": "exponential",
    "uniform": "uniform",
    "gamma": "gamma",
    "constant": "constant",
    "constantone": "constant",
    "constant_one": "constant",
    "one": "constant",
}


class WeightDistribution(BaseModel):
    """Marginal law of a single edge weight."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["exponential", "uniform", "gamma", "constant"]
    rate: float = 1.0
    low: float = 0.0
    high: float = 1.0
    shape: float = 1.0
    scale: float = 1.0

    @model_validator(mode="after")
    def _check_params(self) -> "WeightDistribution":
        if self.kind == "exponential" and not self.rate > 0:
            raise ValueError(f"exponential rate must be > 0, got {self.rate}")
        if self.kind == "uniform" and not 0 <= self.low < self.high:
            raise ValueError(f"uniform needs 0 <= a < b, got ({self.low}, {self.high})")
        if self.kind == "gamma" and not (self.shape > 0 and self.scale > 0):
            raise ValueError(f"gamma needs shape > 0 and scale > 0, got ({self.shape}, {self.scale})")
        return self

    @classmethod
    def exponential(cls, rate: float = 1.0) -> "WeightDistribution":
        return cls(kind="exponential", rate=rate)

    @classmethod
    def uniform(cls, low: float = 0.0, high: float = 1.0) -> "WeightDistribution":
        return cls(kind="uniform", low=low, high=high)

    @classmethod
    def gamma(cls, shape: float, scale: float = 1.0) -> "WeightDistribution":
        return cls(kind="gamma", shape=shape, scale=scale)

    @classmethod
    def constant_one(cls) -> "WeightDistribution":
        return cls(kind="constant")

    @classmethod
    def parse(cls, text: str) -> "WeightDistribution":
        """Parse `exponential(1)`, `uniform(0,2)`, `gamma(2,0.5)` or `constant`."""
        m = _DIST_RE.match(text or "")
        if not m:
            raise ValueError(f"cannot parse distribution {text!r}")
        name = _ALIASES.get(m.group(1).lower())
        if name is None:
            raise ValueError(f"unknown distribution {m.group(1)!r}")
        raw = m.group(2)
        try:
            params = [float(p) for p in raw.split(",")] if raw and raw.strip() else []
        except ValueError:
            raise ValueError(f"non-numeric parameter in {text!r}") from None
        expected = {"exponential": (0, 1), "uniform": (2, 2), "gamma": (1, 2), "constant": (0, 0)}[name]
        if not expected[0] <= len(params) <= expected[1]:
            raise ValueError(f"{name} takes {expected[0]}..{expected[1]} parameters, got {len(params)}")
        if name == "exponential":
            return cls.exponential(*params)
        if name == "uniform":
            return cls.uniform(*params)
        if name == "gamma":
            return cls.gamma(*params)
        return cls.constant_one()

    @property
    def label(self) -> str:
        if self.kind == "exponential":
            return f"exponential({self.rate!r})"
        if self.kind == "uniform":
            return f"uniform({self.low!r},{self.high!r})"
        if self.kind == "gamma":
            return f"gamma({self.shape!r},{self.scale!r})"
        return "constant"

    @property
    def continuous(self) -> bool:
        return self.kind != "constant"

    @property
    def mean(self) -> float:
        if self.kind == "exponential":
            return 1.0 / self.rate
        if self.kind == "uniform":
            return 0.5 * (self.low + self.high)
        if self.kind == "gamma":
            return self.shape * self.scale
        return 1.0

    def frozen(self) -> Any:
        """The matching scipy.stats frozen distribution (for goodness-of-fit checks)."""
        if self.kind == "exponential":
            return stats.expon(scale=1.0 / self.rate)
        if self.kind == "uniform":
            return stats.uniform(loc=self.low, scale=self.high - self.low)
        if self.kind == "gamma":
            return stats.gamma(a=self.shape, scale=self.scale)
        raise DegenerateInputError("the constant test law has no continuous CDF")

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Inverse CDF applied to uniforms in [0, 1)."""
        if self.kind == "exponential":
            return -np.log1p(-u) / self.rate
        if self.kind == "uniform":
            return self.low + (self.high - self.low) * u
        if self.kind == "gamma":
            return self.scale * special.gammaincinv(self.shape, u)
        return np.ones_like(u)


def _draw_positive(distribution: WeightDistribution, key: int, ids: np.ndarray) -> np.ndarray:
    ids = np.atleast_1d(np.asarray(ids, dtype=np.uint64))
    w = distribution.transform(keyed_uniforms(key, ids, 0))
    bad = ~(w > 0)
    counter = 0
    while bad.any():
        counter += 1
        w[bad] = distribution.transform(keyed_uniforms(key, ids[bad], counter))
        bad = ~(w > 0)
    return w


# ---------------- fields ---------------- #


@dataclass(frozen=True)
class EdgeWeightField:
    """The realization omega: edge -> positive weight, fixed by (seed, distribution)."""

    seed: int
    distribution: WeightDistribution = WeightDistribution(kind="exponential")

    def __post_init__(self) -> None:
        object.__setattr__(self, "seed", _check_seed(self.seed))

    @property
    def key(self) -> int:
        return mix64(self.seed ^ EDGE_DOMAIN)

    def weights_for_ids(self, ids: np.ndarray) -> np.ndarray:
        return _draw_positive(self.distribution, self.key, ids)

    def weight(self, e: Edge) -> float:
        a, b = e.endpoints
        check_range(a)
        check_range(b)
        ids = edge_ids(np.array([a.x]), np.array([a.y]), bool(e.vertical))
        return float(self.weights_for_ids(ids)[0])

    def window_weights(self, window: Window) -> Tuple[np.ndarray, np.ndarray]:
        """
        (horizontal, vertical) weight grids for the window's induced edges.
        horizontal[r, c] joins (x_min+c, y_min+r) to its east neighbour,
        vertical[r, c] joins (x_min+c, y_min+r) to its north neighbour.
        """
        return _cached_window_weights(self, window)


@lru_cache(maxsize=16)
def _cached_window_weights(field: EdgeWeightField, window: Window) -> Tuple[np.ndarray, np.ndarray]:
    xs, ys = window.coordinates()
    side = window.side
    h_ids = edge_ids(xs[:, :-1], ys[:, :-1], vertical=False)
    v_ids = edge_ids(xs[:-1, :], ys[:-1, :], vertical=True)
    horizontal = field.weights_for_ids(h_ids.ravel()).reshape(side, side - 1)
    vertical = field.weights_for_ids(v_ids.ravel()).reshape(side - 1, side)
    horizontal.setflags(write=False)
    vertical.setflags(write=False)
    return horizontal, vertical


@dataclass(frozen=True)
class VertexNoise:
    """Independent Uniform[0,1) marks xi_z on vertices."""

    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "seed", _check_seed(self.seed))

    @property
    def key(self) -> int:
        return mix64(self.seed ^ VERTEX_DOMAIN)

    def uniform(self, z: Vertex) -> float:
        x, y = check_range(z)
        return float(keyed_uniforms(self.key, vertex_keys(np.array([x]), np.array([y])))[0])

    def uniforms(self, window: Window) -> np.ndarray:
        """Noise grid of shape (side, side), indexed [row, col]."""
        xs, ys = window.coordinates()
        return keyed_uniforms(self.key, vertex_keys(xs, ys).ravel()).reshape(window.side, window.side)


def weight(field: EdgeWeightField, e: Edge) -> float:
    return field.weight(e)


def vertex_uniform(noise: VertexNoise, z: Vertex) -> float:
    return noise.uniform(z)
