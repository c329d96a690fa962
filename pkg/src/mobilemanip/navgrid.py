"""Occupancy grid, navigability queries and geodesic distance fields.

Distances are 8-connected shortest paths with straight steps costing one
cell and diagonal steps costing sqrt(2) cells. Diagonal steps are allowed
only if at least one of the two orthogonal cells they pass between is free.

Each field stores, per cell, the number of straight and diagonal steps on a
shortest path. The metric distance is always derived from those counts as
``resolution * (n_straight + n_diagonal * sqrt(2))`` so that any two correct
shortest-path computations produce bit-identical distances, independent of
the order in which edge costs were accumulated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numba
import numpy as np
from scipy import ndimage

from .geometry import Pose2D, Rect

SQRT2 = math.sqrt(2.0)
DEFAULT_RESOLUTION = 0.05
ROBOT_RADIUS = 0.3
SNAP_RADIUS = 0.25
GRID_FORMAT_VERSION = 1


class GridError(ValueError):
    pass


class EmptyNavigableSetError(GridError):
    pass


class OffNavmeshError(GridError):
    pass


@dataclass(eq=False)
class GridMap:
    """Boolean navigability raster, indexed ``navigable[row, col]`` = ``[iy, ix]``."""

    resolution: float
    navigable: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.resolution > 0:
            raise GridError("resolution must be positive")
        self.navigable = np.ascontiguousarray(self.navigable, dtype=bool)
        self.navigable.setflags(write=False)
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def height(self) -> int:
        return self.navigable.shape[0]

    @property
    def width(self) -> int:
        return self.navigable.shape[1]

    @property
    def n_cells(self) -> int:
        return self.navigable.size

    @cached_property
    def flat_navigable(self) -> np.ndarray:
        return self.navigable.ravel()

    @cached_property
    def navigable_indices(self) -> np.ndarray:
        return np.flatnonzero(self.flat_navigable)

    @cached_property
    def components(self) -> np.ndarray:
        # Corner-cut-free 8-connectivity has the same components as 4-connectivity.
        labels, _ = ndimage.label(self.navigable)
        return labels.ravel()

    @cached_property
    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """World (x, y) of every cell center, flattened row-major."""
        iy, ix = np.divmod(np.arange(self.n_cells), self.width)
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        """Return ``(ix, iy)``; may be out of bounds."""
        return (
            int(math.floor((x - self.origin[0]) / self.resolution)),
            int(math.floor((y - self.origin[1]) / self.resolution)),
        )

    def cell_to_world(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def index(self, ix: int, iy: int) -> int:
        return iy * self.width + ix

    def unravel(self, idx: int) -> tuple[int, int]:
        iy, ix = divmod(int(idx), self.width)
        return ix, iy

    def index_center(self, idx: int) -> tuple[float, float]:
        return self.cell_to_world(*self.unravel(idx))

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def is_navigable_xy(self, x: float, y: float) -> bool:
        ix, iy = self.world_to_cell(x, y)
        return self.in_bounds(ix, iy) and bool(self.navigable[iy, ix])

    def snap(self, x: float, y: float, radius: float = SNAP_RADIUS) -> int:
        """Nearest navigable cell index within ``radius`` of (x, y).

        The cell containing the point wins if navigable; otherwise the cell
        whose center is closest (ties: lowest index).
        """
        ix, iy = self.world_to_cell(x, y)
        if self.in_bounds(ix, iy) and self.navigable[iy, ix]:
            return self.index(ix, iy)
        r = int(math.ceil(radius / self.resolution)) + 1
        x0, x1 = max(ix - r, 0), min(ix + r + 1, self.width)
        y0, y1 = max(iy - r, 0), min(iy + r + 1, self.height)
        if x0 >= x1 or y0 >= y1:
            raise OffNavmeshError(f"({x:.3f}, {y:.3f}) is off the map")
        sub = self.navigable[y0:y1, x0:x1]
        gy, gx = np.nonzero(sub)
        if gx.size == 0:
            raise OffNavmeshError(f"no navigable cell within {radius} m of ({x:.3f}, {y:.3f})")
        cx = self.origin[0] + (gx + x0 + 0.5) * self.resolution
        cy = self.origin[1] + (gy + y0 + 0.5) * self.resolution
        d = np.hypot(cx - x, cy - y)
        ok = d <= radius
        if not ok.any():
            raise OffNavmeshError(f"no navigable cell within {radius} m of ({x:.3f}, {y:.3f})")
        idx = (gy + y0) * self.width + (gx + x0)
        idx, d = idx[ok], d[ok]
        order = np.lexsort((idx, d))
        return int(idx[order[0]])

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        flat = self.flat_navigable.astype(np.int8)
        change = np.flatnonzero(np.diff(flat)) + 1
        bounds = np.concatenate([[0], change, [flat.size]])
        return {
            "version": GRID_FORMAT_VERSION,
            "resolution": self.resolution,
            "width": self.width,
            "height": self.height,
            "origin": list(self.origin),
            "rle": {"first": int(flat[0]) if flat.size else 0, "runs": np.diff(bounds).tolist()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "GridMap":
        if d.get("version") != GRID_FORMAT_VERSION:
            raise GridError(f"unsupported grid format version {d.get('version')}")
        runs = d["rle"]["runs"]
        value = bool(d["rle"]["first"])
        parts = []
        for n in runs:
            parts.append(np.full(n, value))
            value = not value
        flat = np.concatenate(parts) if parts else np.zeros(0, bool)
        if flat.size != d["width"] * d["height"]:
            raise GridError("run lengths do not match grid dimensions")
        return cls(d["resolution"], flat.reshape(d["height"], d["width"]), tuple(d["origin"]))

    @classmethod
    def from_json(cls, s: str) -> "GridMap":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True, eq=False)
class GoalRegion:
    """Non-empty set of navigable cells, stored as sorted flat indices."""

    grid: GridMap
    cells: np.ndarray

    def __post_init__(self):
        cells = np.unique(np.asarray(self.cells, dtype=np.int64))
        if cells.size == 0:
            raise GridError("goal region is empty")
        if not self.grid.flat_navigable[cells].all():
            raise GridError("goal region contains non-navigable cells")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    def __len__(self) -> int:
        return int(self.cells.size)

    def __contains__(self, idx) -> bool:
        i = np.searchsorted(self.cells, idx)
        return bool(i < self.cells.size and self.cells[i] == idx)

    @classmethod
    def from_points(cls, grid: GridMap, points: Iterable[Sequence[float]]) -> "GoalRegion":
        return cls(grid, [grid.snap(p[0], p[1]) for p in points])

    def centers(self) -> np.ndarray:
        xs, ys = self.grid.cell_centers
        return np.stack([xs[self.cells], ys[self.cells]], axis=1)


@dataclass(frozen=True, eq=False)
class DistanceField:
    grid: GridMap
    n_straight: np.ndarray
    n_diagonal: np.ndarray
    meters: np.ndarray

    def at_index(self, idx: int) -> float:
        return float(self.meters.flat[idx])

    def at(self, x: float, y: float) -> float:
        """Distance after snapping (x, y) to the grid; raises OffNavmeshError."""
        return self.at_index(self.grid.snap(x, y))

    def reachable(self) -> np.ndarray:
        return np.isfinite(self.meters)


# -- Dijkstra over (straight, diagonal) step counts ------------------------

_DIRS = np.array(
    [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)], dtype=np.int64
)


@numba.njit(cache=True)
def _heap_push(keys, vals, size, key, val):
    i = size
    keys[i] = key
    vals[i] = val
    while i > 0:
        parent = (i - 1) >> 1
        if keys[parent] <= keys[i]:
            break
        keys[parent], keys[i] = keys[i], keys[parent]
        vals[parent], vals[i] = vals[i], vals[parent]
        i = parent
    return size + 1


@numba.njit(cache=True)
def _heap_pop(keys, vals, size):
    key, val = keys[0], vals[0]
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        child = left
        if left + 1 < size and keys[left + 1] < keys[left]:
            child = left + 1
        if keys[i] <= keys[child]:
            break
        keys[child], keys[i] = keys[i], keys[child]
        vals[child], vals[i] = vals[i], vals[child]
        i = child
    return key, val, size


@numba.njit(cache=True)
def _step_count_dijkstra(nav, sources, dirs, sqrt2):
    h, w = nav.shape
    n = h * w
    ns = np.full(n, -1, np.int64)
    nd = np.full(n, -1, np.int64)
    best = np.full(n, np.inf)
    done = np.zeros(n, np.bool_)
    cap = 9 * n + sources.size + 1
    keys = np.empty(cap)
    vals = np.empty(cap, np.int64)
    size = 0
    for s in sources:
        if best[s] > 0.0:
            best[s] = 0.0
            ns[s] = 0
            nd[s] = 0
            size = _heap_push(keys, vals, size, 0.0, s)
    while size > 0:
        key, u, size = _heap_pop(keys, vals, size)
        if done[u] or key > best[u]:
            continue
        done[u] = True
        uy = u // w
        ux = u - uy * w
        for k in range(8):
            dx = dirs[k, 0]
            dy = dirs[k, 1]
            vx = ux + dx
            vy = uy + dy
            if vx < 0 or vx >= w or vy < 0 or vy >= h or not nav[vy, vx]:
                continue
            diag = dx != 0 and dy != 0
            if diag and not (nav[uy, vx] or nav[vy, ux]):
                continue
            v = vy * w + vx
            if done[v]:
                continue
            a = ns[u]
            b = nd[u]
            if diag:
                b += 1
            else:
                a += 1
            cand = a + b * sqrt2
            if cand < best[v]:
                best[v] = cand
                ns[v] = a
                nd[v] = b
                size = _heap_push(keys, vals, size, cand, v)
    return ns, nd


def steps_to_meters(resolution: float, n_straight, n_diagonal):
    """Canonical metric distance from step counts; negative counts mean unreachable."""
    ns = np.asarray(n_straight)
    nd = np.asarray(n_diagonal)
    out = resolution * (ns + nd * SQRT2)
    return np.where(ns >= 0, out, np.inf)


def geodesic_field(grid: GridMap, sources) -> DistanceField:
    """Multi-source geodesic distance from every cell to the nearest source cell."""
    if isinstance(sources, GoalRegion):
        cells = sources.cells
    else:
        cells = np.unique(np.atleast_1d(np.asarray(sources, dtype=np.int64)))
    if cells.size == 0:
        raise GridError("geodesic_field needs at least one source")
    if not grid.flat_navigable[cells].all():
        raise GridError("geodesic_field sources must be navigable")
    ns, nd = _step_count_dijkstra(grid.navigable, cells, _DIRS, SQRT2)
    meters = steps_to_meters(grid.resolution, ns, nd)
    h, w = grid.height, grid.width
    for a in (ns, nd, meters):
        a.setflags(write=False)
    return DistanceField(grid, ns.reshape(h, w), nd.reshape(h, w), meters.reshape(h, w))


def geodesic_distance(grid: GridMap, start: Pose2D, to) -> float:
    """Geodesic distance from a pose to a pose, a region, or a precomputed field.

    ``start`` is snapped to the nearest navigable cell within 0.25 m
    (OffNavmeshError otherwise). Unreachable goals give ``inf``.
    """
    src = grid.snap(start.x, start.y)
    if isinstance(to, DistanceField):
        return to.at_index(src)
    if isinstance(to, Pose2D):
        to = GoalRegion(grid, [grid.snap(to.x, to.y)])
    if not isinstance(to, GoalRegion):
        raise TypeError(f"unsupported goal type {type(to).__name__}")
    if src in to:
        return 0.0
    return geodesic_field(grid, to).at_index(src)


# -- rasterization -------------------------------------------------------


def rasterize(
    bounds: Rect,
    obstacles: Sequence[Rect],
    resolution: float = DEFAULT_RESOLUTION,
    robot_radius: float = ROBOT_RADIUS,
) -> GridMap:
    """Navigability of an axis-aligned room with rectangular obstacles.

    A cell is navigable when its center keeps ``robot_radius`` clearance from
    the room walls and at least ``robot_radius`` from every obstacle
    footprint; centers inside an inflated footprint are blocked.
    """
    x0, y0 = bounds.cx - bounds.hx, bounds.cy - bounds.hy
    width = int(round(2 * bounds.hx / resolution))
    height = int(round(2 * bounds.hy / resolution))
    if width <= 0 or height <= 0:
        raise GridError("room extents must be positive")
    grid = GridMap(resolution, np.zeros((height, width), bool), (x0, y0))
    xs, ys = grid.cell_centers
    free = (
        (xs - x0 >= robot_radius)
        & (x0 + 2 * bounds.hx - xs >= robot_radius)
        & (ys - y0 >= robot_radius)
        & (y0 + 2 * bounds.hy - ys >= robot_radius)
    )
    for ob in obstacles:
        free &= ob.distance(xs, ys) >= robot_radius
    if not free.any():
        raise EmptyNavigableSetError("no navigable cell remains")
    return GridMap(resolution, free.reshape(height, width), (x0, y0))


def build_grid(layout, resolution: float = DEFAULT_RESOLUTION, robot_radius: float = ROBOT_RADIUS) -> GridMap:
    """Rasterize a scene layout (anything with ``bounds`` and ``obstacles()``)."""
    return rasterize(layout.bounds, list(layout.obstacles()), resolution, robot_radius)
