# backend/models.py
import hashlib
import json
import math
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from fpp_core.weights import MASK64, WeightDistribution

Command = Literal["shape", "midpoint", "busemann", "labels", "coalesce", "exponents", "geodesic", "render"]

# fields that change where or how fast a run goes, not what it computes
OUTPUT_ONLY = {"outdir", "threads", "progress"}


class RenderOptions(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    stroke_scale: float = Field(default=4.0, gt=0)
    palette: Literal["default", "grayscale"] = "default"
    show_labels: bool = True


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    command: Command
    distribution: str = "exponential(1)"
    seed: int = Field(default=0, ge=0, le=MASK64)
    trials: int = Field(default=100, ge=1)
    radii: Tuple[int, ...] = (16, 32, 64)
    sizes: Tuple[int, ...] = (32, 64, 128, 256)
    threads: int = Field(default=1, ge=1)
    outdir: str = "runs"
    progress: bool = False

    # shape
    directions: int = Field(default=16, ge=1)
    window: Optional[int] = Field(default=None, ge=1)
    epsilon: float = Field(default=0.2, ge=0)
    inner_radii: Tuple[int, ...] = (32, 128)
    offsets: Tuple[int, ...] = (8, 16)
    # exponents
    observable: Literal["chi", "xi", "midpoint"] = "xi"
    # coalesce
    separations: Tuple[int, ...] = (2, 8, 32)
    target_radius: int = Field(default=256, ge=1)
    # busemann
    r0: int = Field(default=16, ge=1)
    horizons: int = Field(default=4, ge=2)
    theta: float = math.pi / 4
    # labels / render / geodesic
    level: int = Field(default=2, ge=1)
    label_window: int = Field(default=64, ge=2)
    class_cap: int = Field(default=64, ge=1)
    reference_angle: float = 0.0
    source: Tuple[int, int] = (0, 0)
    target: Tuple[int, int] = (16, 0)

    render: RenderOptions = RenderOptions()

    @field_validator("distribution")
    @classmethod
    def _normalize_distribution(cls, v: str) -> str:
        return WeightDistribution.parse(v).label

    @field_validator("radii", "sizes", "inner_radii", "offsets")
    @classmethod
    def _positive_list(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v:
            raise ValueError("list must not be empty")
        if any(x < 1 for x in v):
            raise ValueError(f"entries must be positive integers, got {list(v)}")
        return v

    @field_validator("separations")
    @classmethod
    def _separations(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v or any(x < 0 for x in v):
            raise ValueError("separations must be a non-empty list of integers >= 0")
        return v

    @model_validator(mode="after")
    def _window_policy(self) -> "RunConfig":
        cmd = self.command
        if cmd == "midpoint" and min(self.radii) < 2:
            raise ValueError("midpoint radii must be >= 2")
        if cmd == "exponents" and len(self.sizes) < 3:
            raise ValueError("exponents needs at least 3 sizes")
        if cmd == "exponents" and self.observable == "midpoint" and min(self.sizes) < 2:
            raise ValueError("midpoint sizes must be >= 2")
        if cmd == "coalesce" and 8 * max(self.separations) > self.target_radius:
            raise ValueError(
                f"separation {max(self.separations)} exceeds target_radius/8 = {self.target_radius / 8:g}"
            )
        if self.window is not None:
            probe = {"shape": max(self.radii), "midpoint": max(self.radii), "exponents": max(self.sizes),
                     "busemann": self.r0 << self.horizons}.get(cmd)
            if probe is not None and 3 * probe > 2 * self.window:
                raise ValueError(
                    f"window policy: radius {probe} exceeds 2/3 of window half-width {self.window}"
                )
        return self

    @property
    def weight_distribution(self) -> WeightDistribution:
        return WeightDistribution.parse(self.distribution)

    def identity(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude=OUTPUT_ONLY)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def list_of_ints(text: str) -> List[int]:
    """`8,16,32` -> [8, 16, 32] for flag values."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return [int(p) for p in parts]
