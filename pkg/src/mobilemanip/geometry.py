"""Planar geometry helpers shared by the grid, world and sampler modules.

World frame: x/y span the floor, z points up. Robot base frame: x forward,
y up, z to the robot's right (right-handed), so a base-frame point
``(a, b, c)`` sits ``a`` m ahead, ``b`` m above the floor and ``c`` m to the
right of the base origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(theta: float) -> float:
    """Normalize an angle into (-pi, pi]."""
    theta = math.fmod(theta, 2.0 * math.pi)
    if theta <= -math.pi:
        theta += 2.0 * math.pi
    elif theta > math.pi:
        theta -= 2.0 * math.pi
    return theta


def angle_diff(a: float, b: float) -> float:
    """Absolute wrapped difference between two headings, in [0, pi]."""
    return abs(wrap_angle(a - b))


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_local(self, x: float, y: float) -> tuple[float, float]:
        """World floor point -> coordinates in this pose's frame (x ahead, y left)."""
        dx, dy = x - self.x, y - self.y
        c, s = math.cos(self.theta), math.sin(self.theta)
        return c * dx + s * dy, -s * dx + c * dy

    def to_world(self, u: float, v: float) -> tuple[float, float]:
        """Inverse of :meth:`to_local`."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return self.x + c * u - s * v, self.y + s * u + c * v

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "theta": self.theta}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose2D":
        return cls(d["x"], d["y"], d["theta"])


def bearing(from_xy, to_xy) -> float:
    return math.atan2(to_xy[1] - from_xy[1], to_xy[0] - from_xy[0])


def base_to_world(base: Pose2D, p) -> np.ndarray:
    """Base-frame 3D point -> world-frame 3D point."""
    c, s = math.cos(base.theta), math.sin(base.theta)
    fwd, up, right = float(p[0]), float(p[1]), float(p[2])
    return np.array([base.x + c * fwd + s * right, base.y + s * fwd - c * right, up])


def world_to_base(base: Pose2D, p) -> np.ndarray:
    c, s = math.cos(base.theta), math.sin(base.theta)
    dx, dy = float(p[0]) - base.x, float(p[1]) - base.y
    return np.array([c * dx + s * dy, float(p[2]), s * dx - c * dy])


@dataclass(frozen=True)
class Rect:
    """Oriented rectangle on the floor: center, half extents, yaw."""

    cx: float
    cy: float
    hx: float
    hy: float
    yaw: float = 0.0

    @classmethod
    def from_bounds(cls, x0: float, y0: float, x1: float, y1: float) -> "Rect":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, abs(x1 - x0) / 2, abs(y1 - y0) / 2)

    def local(self, x, y):
        dx, dy = x - self.cx, y - self.cy
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return c * dx + s * dy, -s * dx + c * dy

    def distance(self, x, y):
        """Euclidean distance from point(s) to the rectangle (0 inside). Vectorized."""
        u, v = self.local(x, y)
        du = np.maximum(np.abs(u) - self.hx, 0.0)
        dv = np.maximum(np.abs(v) - self.hy, 0.0)
        return np.hypot(du, dv)

    def contains(self, x, y, margin: float = 0.0):
        u, v = self.local(x, y)
        return (np.abs(u) <= self.hx - margin) & (np.abs(v) <= self.hy - margin)

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        pts = []
        for su, sv in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
            u, v = su * self.hx, sv * self.hy
            pts.append((self.cx + c * u - s * v, self.cy + s * u + c * v))
        return np.array(pts)

    def overlaps(self, other: "Rect", gap: float = 0.0) -> bool:
        """Separating-axis test, optionally requiring ``gap`` clearance."""
        a, b = self.corners(), other.corners()
        for r in (self, other):
            for ang in (r.yaw, r.yaw + math.pi / 2):
                axis = np.array([math.cos(ang), math.sin(ang)])
                pa, pb = a @ axis, b @ axis
                if pa.max() + gap <= pb.min() or pb.max() + gap <= pa.min():
                    return False
        return True

    def translated(self, dx: float, dy: float) -> "Rect":
        return Rect(self.cx + dx, self.cy + dy, self.hx, self.hy, self.yaw)

    def to_list(self) -> list:
        return [self.cx, self.cy, self.hx, self.hy, self.yaw]

    @classmethod
    def from_list(cls, v) -> "Rect":
        return cls(*map(float, v))
