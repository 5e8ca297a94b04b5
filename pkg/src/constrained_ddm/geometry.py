"""Planar regions, boundary pieces and point samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import ConfigurationError

BUTTERFLY_AX = 3.3
BUTTERFLY_AY = 4.5


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise GeometryError(f"degenerate box {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.x1, self.y0, self.y1)

    def contains(self, x: np.ndarray, closed: bool = True) -> np.ndarray:
        x = np.atleast_2d(x)
        if closed:
            return (x[:, 0] >= self.x0) & (x[:, 0] <= self.x1) & (x[:, 1] >= self.y0) & (x[:, 1] <= self.y1)
        return (x[:, 0] > self.x0) & (x[:, 0] < self.x1) & (x[:, 1] > self.y0) & (x[:, 1] < self.y1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random((n, 2))
        return np.column_stack([self.x0 + self.width * u[:, 0], self.y0 + self.height * u[:, 1]])

    def edges(self) -> dict[int, "Segment"]:
        """Sides keyed by outward-normal direction: 0 west, 1 east, 2 south, 3 north."""
        return {
            0: Segment((self.x0, self.y0), (self.x0, self.y1), (-1.0, 0.0)),
            1: Segment((self.x1, self.y0), (self.x1, self.y1), (1.0, 0.0)),
            2: Segment((self.x0, self.y0), (self.x1, self.y0), (0.0, -1.0)),
            3: Segment((self.x0, self.y1), (self.x1, self.y1), (0.0, 1.0)),
        }

    def grid(self, n: int) -> np.ndarray:
        """n x n cell-centred evaluation grid, row-major in y then x."""
        xs = self.x0 + (np.arange(n) + 0.5) * self.width / n
        ys = self.y0 + (np.arange(n) + 0.5) * self.height / n
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass(frozen=True)
class Segment:
    """Straight piece with a fixed unit normal (outward for its owner)."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    normal: tuple[float, float]

    @property
    def length(self) -> float:
        return math.dist(self.p0, self.p1)

    def reversed(self) -> "Segment":
        return Segment(self.p0, self.p1, (-self.normal[0], -self.normal[1]))

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Uniform random points along the piece sorted by arc length, with normals."""
        if n <= 0:
            return np.zeros((0, 2)), np.zeros((0, 2))
        t = np.sort(rng.random(n))
        p0, p1 = np.asarray(self.p0), np.asarray(self.p1)
        pts = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
        return pts, np.tile(np.asarray(self.normal, dtype=np.float64), (n, 1))


def butterfly_rho(theta):
    return 1.0 + np.cos(theta) * np.sin(4.0 * theta)


def butterfly_point(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    r = butterfly_rho(theta)
    return np.stack([BUTTERFLY_AX * r * np.cos(theta), BUTTERFLY_AY * r * np.sin(theta)], axis=-1)


def butterfly_normal(theta) -> np.ndarray:
    """Outward unit normal of the counter-clockwise butterfly curve."""
    theta = np.asarray(theta, dtype=np.float64)
    r = butterfly_rho(theta)
    dr = -np.sin(theta) * np.sin(4.0 * theta) + 4.0 * np.cos(theta) * np.cos(4.0 * theta)
    tx = BUTTERFLY_AX * (dr * np.cos(theta) - r * np.sin(theta))
    ty = BUTTERFLY_AY * (dr * np.sin(theta) + r * np.cos(theta))
    nrm = np.hypot(tx, ty)
    return np.stack([ty / nrm, -tx / nrm], axis=-1)


def inside_butterfly(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    sx, sy = x[:, 0] / BUTTERFLY_AX, x[:, 1] / BUTTERFLY_AY
    return np.hypot(sx, sy) < butterfly_rho(np.arctan2(sy, sx))


@dataclass(frozen=True)
class ButterflyArc:
    """Portion of the butterfly boundary with polar parameter in [theta0, theta1]."""

    theta0: float
    theta1: float

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if n <= 0:
            return np.zeros((0, 2)), np.zeros((0, 2))
        theta = np.sort(self.theta0 + (self.theta1 - self.theta0) * rng.random(n))
        return butterfly_point(theta), butterfly_normal(theta)


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxRegion:
    box: Box

    def contains(self, x) -> np.ndarray:
        return self.box.contains(x)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.box.sample(n, rng)

    @property
    def bounds(self) -> Box:
        return self.box


@dataclass(frozen=True)
class FrameRegion:
    """Outer box with an inner box removed."""

    outer: Box
    inner: Box

    def contains(self, x) -> np.ndarray:
        return self.outer.contains(x) & ~self.inner.contains(x, closed=False)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return _rejection(self, self.outer, n, rng)

    @property
    def bounds(self) -> Box:
        return self.outer


@dataclass(frozen=True)
class ButterflyRegion:
    """Intersection of the butterfly with an axis-aligned clip box."""

    clip: Box

    def contains(self, x) -> np.ndarray:
        return self.clip.contains(x) & inside_butterfly(x)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return _rejection(self, self.clip, n, rng)

    @property
    def bounds(self) -> Box:
        return self.clip


def _rejection(region, box: Box, n: int, rng: np.random.Generator, max_rounds: int = 200) -> np.ndarray:
    out = np.zeros((0, 2))
    for _ in range(max_rounds):
        if len(out) >= n:
            break
        trial = box.sample(max(2 * (n - len(out)), 64), rng)
        out = np.vstack([out, trial[region.contains(trial)]])
    if len(out) < n:
        raise GeometryError("region has no interior within its bounding box")
    return out[:n]


def sample_butterfly(count: int, region: Box | None, seed: int) -> np.ndarray:
    """Uniform points inside the butterfly, optionally clipped to ``region``."""
    clip = region if region is not None else Box(-2 * BUTTERFLY_AX, 2 * BUTTERFLY_AX, -2 * BUTTERFLY_AY, 2 * BUTTERFLY_AY)
    rng = np.random.default_rng(seed)
    return ButterflyRegion(clip).sample(count, rng)


def check_count(n, what: str) -> int:
    n = int(n)
    if n < 0:
        raise ConfigurationError(f"negative {what} count")
    return n
