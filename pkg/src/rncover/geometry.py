"""Axis-aligned rectangles and scene normalization."""

from __future__ import annotations

import math
from dataclasses import dataclass


class GeometryError(ValueError):
    """Raised for non-finite or degenerate boxes and scenes."""


@dataclass(frozen=True)
class Box:
    """Rectangle given by its center and size, in world units."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"box needs positive size, got w={self.w} h={self.h}")

    @property
    def left(self) -> float:
        return self.cx - self.w / 2

    @property
    def right(self) -> float:
        return self.cx + self.w / 2

    @property
    def bottom(self) -> float:
        return self.cy - self.h / 2

    @property
    def top(self) -> float:
        return self.cy + self.h / 2

    def moved(self, dx: float, dy: float) -> Box:
        return Box(self.cx + dx, self.cy + dy, self.w, self.h)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


@dataclass(frozen=True)
class SceneBounds:
    """The scene rectangle [0, width] x [0, height]."""

    width: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.width) and math.isfinite(self.height)):
            raise GeometryError("non-finite scene bounds")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"scene needs positive size, got {self.width}x{self.height}")

    def as_box(self) -> Box:
        return Box(self.width / 2, self.height / 2, self.width, self.height)

    def contains_point(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height


@dataclass(frozen=True)
class NormalizedBox:
    nx: float
    ny: float
    nw: float
    nh: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.nx, self.ny, self.nw, self.nh)


def _clip(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def normalize_box(b: Box, s: SceneBounds) -> NormalizedBox:
    """Map center to [-1, 1] and size to [0, 1] relative to the scene.

    Components are clamped, so boxes partly outside the scene still
    encode to in-range values.
    """
    nx = 2.0 * b.cx / s.width - 1.0
    ny = 2.0 * b.cy / s.height - 1.0
    return NormalizedBox(
        _clip(nx, -1.0, 1.0),
        _clip(ny, -1.0, 1.0),
        _clip(b.w / s.width, 0.0, 1.0),
        _clip(b.h / s.height, 0.0, 1.0),
    )


def contains(outer: Box, inner: Box) -> bool:
    """True when every edge of `inner` is within or on the edge of `outer`."""
    return (
        inner.left >= outer.left
        and inner.right <= outer.right
        and inner.bottom >= outer.bottom
        and inner.top <= outer.top
    )


def clamp_center_to_scene(b: Box, s: SceneBounds) -> Box:
    if b.w > s.width or b.h > s.height:
        raise GeometryError(f"box {b.as_tuple()} does not fit in scene {s.width}x{s.height}")
    cx = _clip(b.cx, b.w / 2, s.width - b.w / 2)
    cy = _clip(b.cy, b.h / 2, s.height - b.h / 2)
    # center +/- half size can round past the edge by one ulp
    while cx + b.w / 2 > s.width:
        cx = math.nextafter(cx, -math.inf)
    while cx - b.w / 2 < 0.0:
        cx = math.nextafter(cx, math.inf)
    while cy + b.h / 2 > s.height:
        cy = math.nextafter(cy, -math.inf)
    while cy - b.h / 2 < 0.0:
        cy = math.nextafter(cy, math.inf)
    if cx == b.cx and cy == b.cy:
        return b
    return Box(cx, cy, b.w, b.h)
