"""Initial base poses for skills.

Mobile variants draw from a set of candidate cells (a disk around the target
or a rectangle in front of a container); stationary variants use the single
navigable cell closest to the target. The same candidate sets serve as
navigation goal regions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Pose2D, bearing
from .navgrid import GoalRegion, GridMap
from .world import REST_EE

# Rectangles in the container front frame as (x0, y0, x1, y1).
CONTAINER_REGIONS = {
    "open_stationary": (0.80, -0.35, 0.95, 0.35),
    "open_mobile": (0.3, -0.6, 1.5, 0.6),
    "close_stationary": (0.3, -0.35, 0.45, 0.35),
    "close_mobile": (0.3, -0.6, 1.0, 0.6),
    "fridge": (0.933, -1.5, 1.833, 1.5),
}

SAMPLE_BUDGET = 100


class EmptyCandidateSetError(ValueError):
    pass


class SampleBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class InitNoise:
    base_pos_sigma: float = 0.1
    base_pos_max: float = 0.2
    base_yaw_sigma: float = 0.25
    base_yaw_max: float = 0.5
    ee_sigma: float = 0.025
    ee_max: float = 0.05

    @classmethod
    def zero(cls) -> "InitNoise":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class CandidateSet:
    cells: GoalRegion
    source: str  # radius_around_target | container_front | closest_navigable
    params: tuple

    def __len__(self) -> int:
        return len(self.cells.cells)

    def to_json(self) -> str:
        return json.dumps(
            {"source": self.source, "params": list(self.params), "cells": self.cells.cells.tolist()}
        )


def _nearest_navigable(grid: GridMap, x: float, y: float) -> int:
    xs, ys = grid.cell_centers
    idx = grid.navigable_indices
    d2 = (xs[idx] - x) ** 2 + (ys[idx] - y) ** 2
    return int(idx[np.argmin(d2)])  # argmin returns the first, i.e. lowest index


def candidates_around(grid: GridMap, target, radius: float = 2.0) -> CandidateSet:
    """Navigable cells within ``radius`` of the target's floor projection,
    restricted to the connected component nearest the target."""
    x, y = float(target[0]), float(target[1])
    xs, ys = grid.cell_centers
    idx = grid.navigable_indices
    inside = idx[(xs[idx] - x) ** 2 + (ys[idx] - y) ** 2 <= radius * radius]
    if inside.size == 0:
        raise EmptyCandidateSetError(f"no navigable cell within {radius} m of ({x:.2f}, {y:.2f})")
    comps = grid.components
    anchor = inside[np.argmin((xs[inside] - x) ** 2 + (ys[inside] - y) ** 2)]
    inside = inside[comps[inside] == comps[anchor]]
    return CandidateSet(GoalRegion(grid, inside), "radius_around_target", (float(radius),))


def cells_in_frame_rect(grid: GridMap, frame: Pose2D, rect) -> np.ndarray:
    """Indices of navigable cells whose centers lie in ``rect`` (frame coordinates)."""
    x0, y0, x1, y1 = rect
    xs, ys = grid.cell_centers
    idx = grid.navigable_indices
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    dx, dy = xs[idx] - frame.x, ys[idx] - frame.y
    u = c * dx + s * dy
    v = -s * dx + c * dy
    eps = 1e-9
    keep = (u >= x0 - eps) & (u <= x1 + eps) & (v >= y0 - eps) & (v <= y1 + eps)
    return idx[keep]


def container_mode(kind: str, opening: bool, mobile: bool) -> str:
    if kind == "fridge":
        return "fridge"
    return ("open_" if opening else "close_") + ("mobile" if mobile else "stationary")


def candidates_container(grid: GridMap, front_frame: Pose2D, mode: str) -> CandidateSet:
    if mode not in CONTAINER_REGIONS:
        raise ValueError(f"unknown container mode {mode!r}")
    rect = CONTAINER_REGIONS[mode]
    cells = cells_in_frame_rect(grid, front_frame, rect)
    if cells.size == 0:
        raise EmptyCandidateSetError(f"container region {mode} has no navigable cell")
    return CandidateSet(GoalRegion(grid, cells), "container_front", rect)


def stationary_cell(grid: GridMap, target) -> int:
    return _nearest_navigable(grid, float(target[0]), float(target[1]))


@dataclass(frozen=True)
class InitialState:
    base: Pose2D
    ee: np.ndarray
    rejections: int = 0


def _pose_free(grid: GridMap, x: float, y: float) -> bool:
    return grid.is_navigable_xy(x, y)


def _noisy(grid, x, y, facing_target, noise: InitNoise, rng, budget):
    """Apply truncated base noise with rejection; returns (pose, ee, rejections)."""
    rejections = 0
    for _ in range(budget):
        off = np.zeros(2)
        if noise.base_pos_sigma > 0:
            while True:
                off = rng.normal(0.0, noise.base_pos_sigma, size=2)
                if np.hypot(*off) <= noise.base_pos_max:
                    break
        dyaw = 0.0
        if noise.base_yaw_sigma > 0:
            while True:
                dyaw = rng.normal(0.0, noise.base_yaw_sigma)
                if abs(dyaw) <= noise.base_yaw_max:
                    break
        px, py = x + off[0], y + off[1]
        if not _pose_free(grid, px, py):
            rejections += 1
            continue
        yaw = bearing((x, y), facing_target) + dyaw
        ee = REST_EE.copy()
        if noise.ee_sigma > 0:
            ee = ee + np.clip(rng.normal(0.0, noise.ee_sigma, size=3), -noise.ee_max, noise.ee_max)
        return Pose2D(px, py, yaw), ee, rejections
    return None, None, rejections


def sample_initial_state(
    candidates: CandidateSet,
    noise: InitNoise,
    rng: np.random.Generator,
    facing_target,
    budget: int = SAMPLE_BUDGET,
) -> InitialState:
    """Uniform cell, facing the target, plus noise; colliding draws are resampled."""
    region = candidates.cells
    grid = region.grid
    rejections = 0
    for _ in range(budget):
        cell = int(region.cells[rng.integers(len(region.cells))])
        x, y = grid.index_center(cell)
        pose, ee, rej = _noisy(grid, x, y, facing_target, noise, rng, 1)
        rejections += rej
        if pose is not None:
            return InitialState(pose, ee, rejections)
    raise SampleBudgetError(f"no collision-free initial state after {budget} draws")


def stationary_initial_state(
    grid: GridMap,
    target,
    noise: Optional[InitNoise] = None,
    rng: Optional[np.random.Generator] = None,
    budget: int = SAMPLE_BUDGET,
) -> InitialState:
    """Closest navigable cell to the target, facing it, with optional noise."""
    x, y = grid.index_center(stationary_cell(grid, target))
    if noise is None or rng is None:
        return InitialState(Pose2D(x, y, bearing((x, y), target)), REST_EE.copy(), 0)
    pose, ee, rej = _noisy(grid, x, y, target, noise, rng, budget)
    if pose is None:
        raise SampleBudgetError(f"no collision-free stationary state after {budget} draws")
    return InitialState(pose, ee, rej)


# -- skill start regions -----------------------------------------------------


@dataclass(frozen=True)
class SkillSite:
    """Where a skill operates: a target point, optionally a container."""

    skill: str  # pick | place | open_drawer | close_drawer | open_fridge | close_fridge
    target: tuple
    container: Optional[str] = None
    front_frame: Optional[Pose2D] = None

    @property
    def container_kind(self) -> Optional[str]:
        if self.container is None or not self.skill.endswith(("drawer", "fridge")):
            return None
        return "fridge" if self.skill.endswith("fridge") else "drawer"


def site_candidates(grid: GridMap, site: SkillSite, mobile: bool = True, radius: float = 2.0) -> CandidateSet:
    """Candidate start cells for a skill; also the navigation goal region."""
    kind = site.container_kind
    if kind is None:
        if mobile:
            return candidates_around(grid, site.target, radius)
        cell = stationary_cell(grid, site.target)
        return CandidateSet(GoalRegion(grid, [cell]), "closest_navigable", ())
    mode = container_mode(kind, site.skill.startswith("open"), mobile)
    return candidates_container(grid, site.front_frame, mode)


def site_stationary_start(grid: GridMap, site: SkillSite) -> Pose2D:
    """Noise-free stationary start used as the anchor for hand-off experiments."""
    kind = site.container_kind
    if kind is None:
        return stationary_initial_state(grid, site.target).base
    cands = site_candidates(grid, site, mobile=False)
    # rectangle center, snapped to the nearest navigable cell of the region
    rect = cands.params
    cx, cy = site.front_frame.to_world((rect[0] + rect[2]) / 2, (rect[1] + rect[3]) / 2)
    xs, ys = grid.cell_centers
    cells = cands.cells.cells
    best = int(cells[np.argmin((xs[cells] - cx) ** 2 + (ys[cells] - cy) ** 2)])
    x, y = grid.index_center(best)
    return Pose2D(x, y, bearing((x, y), site.target))


def episode_sites(episode) -> list[list[SkillSite]]:
    """Per target: the pick site and place site, with container sites where relevant."""
    layout = episode.layout.resolve()
    frames = {c.id: c.front_frame for c in layout.containers}
    out = []
    for t in episode.targets:
        sites = []
        for skill, pl in (("pick", t.start), ("place", t.goal)):
            sites.append(SkillSite(skill, tuple(pl.position), pl.container, frames.get(pl.container)))
            if pl.container is not None:
                kind = "fridge" if pl.container == "fridge" else "drawer"
                handle_target = _container_probe(frames[pl.container])
                for verb in ("open", "close"):
                    sites.append(SkillSite(f"{verb}_{kind}", handle_target, pl.container, frames[pl.container]))
        out.append(sites)
    return out


def _container_probe(frame: Pose2D) -> tuple:
    x, y = frame.to_world(0.0, 0.0)
    return (x, y, 0.5)


def episode_feasible(episode) -> bool:
    """Every subtask target has a non-empty mobile candidate set."""
    from .episodes import scene_context

    ctx = scene_context(episode.layout.resolve())
    main = ctx.main_mask
    try:
        for sites in episode_sites(episode):
            for site in sites:
                cands = site_candidates(ctx.grid, site, mobile=True)
                if not main[cands.cells.cells].any():
                    return False
    except EmptyCandidateSetError:
        return False
    return True
