"""Procedural scene layouts and rearrangement episodes.

A layout is an axis-aligned room with an optional divider wall, a kitchen
strip (two counters, one holding three drawers, and a fridge) and living-room
furniture. Macro variations differ in large-furniture placement and room
orientation; micro variations nudge the chair and tables by at most 0.3 m.
"""

from __future__ import annotations

import gzip
import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from .geometry import Pose2D, Rect
from .navgrid import GridMap, build_grid
from .world import (
    DRAWER_INTERIOR_DEPTH,
    DRAWER_INTERIOR_HEIGHT,
    FRIDGE_DEPTH,
    FRIDGE_HALF_WIDTH,
    FRIDGE_MAX,
    ContainerState,
    ObjectState,
    RobotState,
    SceneState,
)

EPISODE_FORMAT_VERSION = 1
OBJECT_RADIUS = 0.05
MIN_OBJECT_SPACING = 2 * OBJECT_RADIUS
PLACEMENT_ATTEMPTS = 1000
REACH = 1.2
REACH_MARGIN = 0.1

TASKS = ("tidyhouse", "preparegroceries", "settable", "navroom")
SPLITS = ("train", "cross_config", "cross_layout")

EPISODE_ATTEMPTS = 20
# (first room index, number of rooms) per split for the navigation rooms
NAV_ROOMS = {"train": (0, 64), "cross_config": (1000, 20), "cross_layout": (2000, 20)}

HEIGHTS = {"table": 0.7, "counter": 0.8, "sofa": 0.45, "chair": 0.45, "tv_stand": 0.5}
FRIDGE_SHELVES = {"fridge_middle": 0.8, "fridge_top": 1.1}
MICRO_SHIFT = 0.3


class LayoutInfeasibleError(RuntimeError):
    pass


class RejectionBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class Receptacle:
    id: str
    kind: str
    footprint: Rect
    height: float
    surface_margin: float = 0.08

    @property
    def surface(self) -> Rect:
        f = self.footprint
        m = self.surface_margin
        return Rect(f.cx, f.cy, max(f.hx - m, 0.01), max(f.hy - m, 0.01), f.yaw)


@dataclass(frozen=True)
class ContainerSpec:
    id: str
    kind: str  # drawer | fridge
    front_frame: Pose2D
    host: Optional[str] = None  # counter holding the drawer


@dataclass(frozen=True, eq=False)
class SceneLayout:
    bounds: Rect
    rooms: tuple
    walls: tuple
    receptacles: tuple
    containers: tuple
    macro_id: int
    micro_id: int
    seed: int = 0

    def obstacles(self) -> list[Rect]:
        obs = list(self.walls) + [r.footprint for r in self.receptacles]
        for c in self.containers:
            if c.kind == "fridge":
                obs.append(fridge_footprint(c.front_frame))
        return obs

    def receptacle(self, rid: str) -> Receptacle:
        for r in self.receptacles:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def container(self, cid: str) -> ContainerSpec:
        for c in self.containers:
            if c.id == cid:
                return c
        raise KeyError(cid)

    @property
    def key(self) -> tuple:
        return (self.seed, self.macro_id, self.micro_id)

    def to_dict(self) -> dict:
        return {
            "bounds": self.bounds.to_list(),
            "rooms": [r.to_list() for r in self.rooms],
            "walls": [w.to_list() for w in self.walls],
            "receptacles": [
                {"id": r.id, "kind": r.kind, "footprint": r.footprint.to_list(), "height": r.height}
                for r in self.receptacles
            ],
            "containers": [
                {"id": c.id, "kind": c.kind, "front_frame": c.front_frame.to_dict(), "host": c.host}
                for c in self.containers
            ],
            "macro_id": self.macro_id,
            "micro_id": self.micro_id,
            "seed": self.seed,
        }


def fridge_footprint(frame: Pose2D) -> Rect:
    cx, cy = frame.to_world(-FRIDGE_DEPTH / 2, 0.0)
    return Rect(cx, cy, FRIDGE_DEPTH / 2, FRIDGE_HALF_WIDTH, frame.theta)


# -- layout generation -------------------------------------------------------


def _transform_rect(r: Rect, k: int, mirror: bool, W: float, H: float) -> Rect:
    """Quarter-turn and mirror transform for axis-aligned rectangles."""
    x, y, hx, hy = r.cx, r.cy, r.hx, r.hy
    if mirror:
        x = W - x
    for _ in range(k):
        x, y, W, H = H - y, x, H, W
        hx, hy = hy, hx
    return Rect(x, y, hx, hy)


def _transform_pose(p: Pose2D, k: int, mirror: bool, W: float, H: float) -> Pose2D:
    x, y, th = p.x, p.y, p.theta
    if mirror:
        x, th = W - x, math.pi - th
    for _ in range(k):
        x, y, W, H = H - y, x, H, W
        th += math.pi / 2
    return Pose2D(x, y, th)


def _canonical_layout(rng: np.random.Generator, W: float = 8.0, H: float = 6.0):
    """Kitchen along y=0, living room above. Returns (walls, big, small, containers)."""
    walls = []
    divider = rng.random() < 0.6
    div_y = 2.45
    if divider:
        gap = 1.4
        gx = rng.uniform(1.0, W - 1.0 - gap)
        walls.append(Rect.from_bounds(0.0, div_y - 0.05, gx, div_y + 0.05))
        walls.append(Rect.from_bounds(gx + gap, div_y - 0.05, W, div_y + 0.05))

    # kitchen strip: counter_0 (drawers), counter_1, fridge, in random order
    widths = {"counter_0": 1.8, "counter_1": 1.4, "fridge": 2 * FRIDGE_HALF_WIDTH}
    order = [str(n) for n in rng.permutation(list(widths))]
    free = W - sum(widths.values()) - 0.4
    gaps = rng.dirichlet(np.ones(len(order) + 1)) * free
    x = 0.2 + gaps[0]
    big, containers = [], []
    for i, name in enumerate(order):
        w = widths[name]
        if name == "fridge":
            containers.append(ContainerSpec("fridge", "fridge", Pose2D(x + w / 2, FRIDGE_DEPTH, math.pi / 2)))
        else:
            big.append(Receptacle(name, "counter", Rect.from_bounds(x, 0.0, x + w, 0.6), HEIGHTS["counter"]))
            if name == "counter_0":
                for j, off in enumerate((-0.55, 0.0, 0.55)):
                    containers.append(
                        ContainerSpec(f"drawer_{j}", "drawer", Pose2D(x + w / 2 + off, 0.6, math.pi / 2), host=name)
                    )
        x += w + gaps[i + 1]

    # living room: sofa against the top wall, tv stand against a side wall
    sofa_x = rng.uniform(1.2, W - 1.2)
    big.append(Receptacle("sofa", "sofa", Rect(sofa_x, H - 0.4, 0.9, 0.4), HEIGHTS["sofa"]))
    tv_side = rng.integers(2)
    tv_y = rng.uniform(3.4, H - 1.4)
    tv_x = 0.2 if tv_side == 0 else W - 0.2
    big.append(Receptacle("tv_stand", "tv_stand", Rect(tv_x, tv_y, 0.2, 0.6), HEIGHTS["tv_stand"]))

    small = [
        Receptacle("table_0", "table", Rect(0, 0, 0.5, 0.35), HEIGHTS["table"]),
        Receptacle("table_1", "table", Rect(0, 0, 0.4, 0.4), HEIGHTS["table"]),
        Receptacle("chair", "chair", Rect(0, 0, 0.25, 0.25), HEIGHTS["chair"]),
    ]
    placed = []
    fixed = [r.footprint for r in big] + walls
    for rec in small:
        for _ in range(500):
            cx = rng.uniform(0.9, W - 0.9)
            cy = rng.uniform(div_y + 0.9 if divider else 1.9, H - 1.3)
            fp = Rect(cx, cy, rec.footprint.hx, rec.footprint.hy)
            if all(not fp.overlaps(o, gap=0.9) for o in fixed + placed):
                placed.append(fp)
                break
        else:
            raise LayoutInfeasibleError("could not place small furniture")
    small = [Receptacle(r.id, r.kind, fp, r.height) for r, fp in zip(small, placed)]
    rooms = [Rect.from_bounds(0, 0, W, div_y), Rect.from_bounds(0, div_y, W, H)] if divider else [Rect.from_bounds(0, 0, W, H)]
    return rooms, walls, big, small, containers


def _assemble(rooms, walls, recs, containers, k, mirror, W, H, macro_id, micro_id, seed) -> SceneLayout:
    t = lambda r: _transform_rect(r, k, mirror, W, H)
    bw, bh = (H, W) if k % 2 else (W, H)
    return SceneLayout(
        bounds=Rect.from_bounds(0.0, 0.0, bw, bh),
        rooms=tuple(t(r) for r in rooms),
        walls=tuple(t(w) for w in walls),
        receptacles=tuple(Receptacle(r.id, r.kind, t(r.footprint), r.height) for r in recs),
        containers=tuple(
            ContainerSpec(c.id, c.kind, _transform_pose(c.front_frame, k, mirror, W, H), c.host) for c in containers
        ),
        macro_id=macro_id,
        micro_id=micro_id,
        seed=seed,
    )


def generate_layouts(seed: int, n_macro: int = 5, n_micro: int = 21) -> list[SceneLayout]:
    """``n_macro * n_micro`` layouts, macro-major, deterministic in ``seed``."""
    if n_macro < 2:
        raise ValueError("need at least 2 macro variations (one is held out)")
    return [layout_for(seed, m, u) for m in range(n_macro) for u in range(n_micro)]


@lru_cache(maxsize=64)
def _macro_base(seed: int, macro_id: int):
    """First feasible unperturbed arrangement for a macro variation."""
    W, H = 8.0, 6.0
    transforms = [(k, m) for m in (False, True) for k in range(4)]
    perm = np.random.default_rng([seed, 7919]).permutation(len(transforms))
    k, mirror = transforms[perm[macro_id % len(transforms)]]
    for attempt in range(50):
        rng = np.random.default_rng([seed, macro_id, attempt])
        try:
            parts = _canonical_layout(rng, W, H)
        except LayoutInfeasibleError:
            continue
        rooms, walls, big, small, containers = parts
        layout = _assemble(rooms, walls, big + small, containers, k, mirror, W, H, macro_id, 0, seed)
        if check_layout(layout):
            return parts, (k, mirror, W, H), layout
    raise LayoutInfeasibleError(f"macro variation ({seed}, {macro_id}) infeasible after 50 attempts")


@lru_cache(maxsize=512)
def layout_for(seed: int, macro_id: int, micro_id: int) -> SceneLayout:
    """Single layout, regenerated deterministically from its reference.

    Micro variations keep the macro's walls, large furniture and containers
    and only move the tables and the chair.
    """
    (rooms, walls, big, small, containers), (k, mirror, W, H), base = _macro_base(seed, macro_id)
    if micro_id == 0:
        return base
    for attempt in range(50):
        moved = _perturb_small(np.random.default_rng([seed, macro_id, micro_id, attempt]), big, small, walls, W, H)
        if moved is None:
            continue
        layout = _assemble(rooms, walls, big + moved, containers, k, mirror, W, H, macro_id, micro_id, seed)
        if check_layout(layout):
            return layout
    raise LayoutInfeasibleError(f"layout ({seed}, {macro_id}, {micro_id}) infeasible after 50 attempts")


def _perturb_small(rng, big, small, walls, W, H):
    fixed = [r.footprint for r in big] + list(walls)
    for _ in range(200):
        out = []
        for r in small:
            ang = rng.uniform(0, 2 * math.pi)
            rad = MICRO_SHIFT * math.sqrt(rng.random())
            fp = r.footprint.translated(rad * math.cos(ang), rad * math.sin(ang))
            out.append(Receptacle(r.id, r.kind, fp, r.height))
        fps = [r.footprint for r in out]
        inside = all(0.6 < f.cx < W - 0.6 and 0.6 < f.cy < H - 0.6 for f in fps)
        sep = all(
            not a.overlaps(b, gap=0.8) for i, a in enumerate(fps) for b in fps[i + 1:] + fixed
        ) if inside else False
        if sep:
            return out
    return None


def check_layout(layout: SceneLayout) -> bool:
    """Every container front and receptacle must touch the main navigable component."""
    from .sampler import CONTAINER_REGIONS, cells_in_frame_rect

    try:
        ctx = scene_context(layout)
    except Exception:
        return False
    main = ctx.main_mask
    for c in layout.containers:
        mode = "fridge" if c.kind == "fridge" else "open_mobile"
        cells = cells_in_frame_rect(ctx.grid, c.front_frame, CONTAINER_REGIONS[mode])
        if not main[cells].any():
            return False
        if c.kind == "drawer":
            cells = cells_in_frame_rect(ctx.grid, c.front_frame, CONTAINER_REGIONS["open_stationary"])
            if not main[cells].any():
                return False
    for r in layout.receptacles:
        s = r.surface
        if ctx.nav_distance(s.cx, s.cy) > reach_radius(r.height + OBJECT_RADIUS) + max(s.hx, s.hy):
            return False
    return True


def reach_radius(z: float, reach: float = REACH) -> float:
    return math.sqrt(max(reach * reach - z * z, 0.0))


# -- scene context (cached grid and derived data) ---------------------------


class SceneContext:
    """Grid plus derived lookups for one layout; immutable and shareable."""

    def __init__(self, layout: SceneLayout):
        self.layout = layout
        self.grid: GridMap = build_grid(layout)
        comps = self.grid.components
        counts = np.bincount(comps)
        counts[0] = 0
        self.main_label = int(np.argmax(counts))
        self.main_mask = comps == self.main_label
        self.main_indices = np.flatnonzero(self.main_mask)
        mask2d = self.main_mask.reshape(self.grid.height, self.grid.width)
        self._nav_edt = ndimage.distance_transform_edt(~mask2d) * self.grid.resolution
        self._fields: dict = {}

    def nav_distance(self, x: float, y: float) -> float:
        """Approximate horizontal distance from (x, y) to the main navigable area."""
        g = self.grid
        ix, iy = g.world_to_cell(x, y)
        ix = min(max(ix, 0), g.width - 1)
        iy = min(max(iy, 0), g.height - 1)
        return float(self._nav_edt[iy, ix])

    def field(self, key, cells):
        """Geodesic field cache keyed by caller-chosen ``key``."""
        from .navgrid import geodesic_field

        f = self._fields.get(key)
        if f is None:
            if len(self._fields) > 256:
                self._fields.clear()
            f = geodesic_field(self.grid, cells)
            self._fields[key] = f
        return f


_CTX_CACHE: dict = {}


def scene_context(layout: SceneLayout) -> SceneContext:
    key = layout.key
    ctx = _CTX_CACHE.get(key)
    if ctx is None or ctx.layout is not layout and ctx.layout.to_dict() != layout.to_dict():
        if len(_CTX_CACHE) > 128:
            _CTX_CACHE.clear()
        ctx = SceneContext(layout)
        _CTX_CACHE[key] = ctx
    return ctx


# -- navigation training rooms ---------------------------------------------


@lru_cache(maxsize=2048)
def nav_room_layout(seed: int, index: int) -> SceneLayout:
    """6 m x 6 m room with 2-4 pieces of furniture, no containers."""
    rng = np.random.default_rng([seed, 104729, index])
    for _ in range(100):
        recs = []
        n = int(rng.integers(2, 5))
        kinds = rng.choice(["table", "counter", "sofa", "tv_stand", "chair"], size=n)
        ok = True
        for i, kind in enumerate(kinds):
            hx, hy = {"table": (0.5, 0.35), "counter": (0.7, 0.3), "sofa": (0.9, 0.4),
                      "tv_stand": (0.6, 0.2), "chair": (0.25, 0.25)}[kind]
            if rng.random() < 0.5:
                hx, hy = hy, hx
            for _ in range(200):
                fp = Rect(rng.uniform(hx + 0.05, 6 - hx - 0.05), rng.uniform(hy + 0.05, 6 - hy - 0.05), hx, hy)
                if all(not fp.overlaps(r.footprint, gap=0.9) for r in recs):
                    recs.append(Receptacle(f"{kind}_{i}", str(kind), fp, HEIGHTS[str(kind)]))
                    break
            else:
                ok = False
        if not ok:
            continue
        layout = SceneLayout(
            bounds=Rect.from_bounds(0, 0, 6, 6), rooms=(Rect.from_bounds(0, 0, 6, 6),), walls=(),
            receptacles=tuple(recs), containers=(), macro_id=-1, micro_id=index, seed=seed,
        )
        ctx = scene_context(layout)
        if all(
            ctx.nav_distance(r.surface.cx, r.surface.cy) <= reach_radius(r.height) + max(r.surface.hx, r.surface.hy)
            for r in recs
        ):
            return layout
    raise LayoutInfeasibleError(f"nav room {index} infeasible")


# -- episodes ---------------------------------------------------------------


@dataclass(frozen=True)
class Placement:
    position: tuple
    receptacle: str
    container: Optional[str] = None


@dataclass(frozen=True)
class Target:
    start: Placement
    goal: Placement
    label: str = "generic"


@dataclass(frozen=True)
class LayoutRef:
    seed: int
    macro_id: int
    micro_id: int

    def resolve(self) -> SceneLayout:
        if self.macro_id < 0:
            return nav_room_layout(self.seed, self.micro_id)
        return layout_for(self.seed, self.macro_id, self.micro_id)


@dataclass(frozen=True)
class EpisodeSpec:
    episode_id: int
    task: str
    split: str
    seed: int
    layout: LayoutRef
    targets: tuple
    clutter: tuple = ()

    def to_dict(self) -> dict:
        def pl(p: Placement):
            return {"position": [float(v) for v in p.position], "receptacle": p.receptacle, "container": p.container}

        return {
            "version": EPISODE_FORMAT_VERSION,
            "episode_id": self.episode_id,
            "task": self.task,
            "split": self.split,
            "seed": self.seed,
            "layout": {"seed": self.layout.seed, "macro_id": self.layout.macro_id, "micro_id": self.layout.micro_id},
            "targets": [{"start": pl(t.start), "goal": pl(t.goal), "label": t.label} for t in self.targets],
            "clutter": [pl(c) for c in self.clutter],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeSpec":
        if d.get("version") != EPISODE_FORMAT_VERSION:
            raise ValueError(f"unsupported episode format {d.get('version')}")

        def pl(p):
            return Placement(tuple(p["position"]), p["receptacle"], p["container"])

        return cls(
            episode_id=d["episode_id"],
            task=d["task"],
            split=d["split"],
            seed=d["seed"],
            layout=LayoutRef(**d["layout"]),
            targets=tuple(Target(pl(t["start"]), pl(t["goal"]), t.get("label", "generic")) for t in d["targets"]),
            clutter=tuple(pl(c) for c in d["clutter"]),
        )


def write_episodes(path, episodes: Iterable[EpisodeSpec]) -> None:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wt", encoding="utf-8") as f:
        for ep in episodes:
            f.write(json.dumps(ep.to_dict(), separators=(",", ":")) + "\n")


def read_episodes(path) -> list[EpisodeSpec]:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as f:
        return [EpisodeSpec.from_dict(json.loads(line)) for line in f if line.strip()]


def split_scenes(layouts: list[SceneLayout], split: str, seed: int) -> list[SceneLayout]:
    """64 train / 20 cross-config scenes from all but the last macro; the last is held out."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    held = max(l.macro_id for l in layouts)
    if split == "cross_layout":
        return [l for l in layouts if l.macro_id == held]
    seen = [l for l in layouts if l.macro_id != held]
    order = np.random.default_rng([seed, 31337]).permutation(len(seen))
    n_train = min(64, len(seen) - 1) if len(seen) > 1 else 1
    chosen = order[:n_train] if split == "train" else order[n_train:]
    return [seen[i] for i in sorted(chosen)]


class _Placer:
    """Rejection sampler for object positions on surfaces, shelves and drawers."""

    def __init__(self, ctx: SceneContext, rng: np.random.Generator):
        self.ctx = ctx
        self.rng = rng
        self.taken: list[np.ndarray] = []
        self.layout = ctx.layout

    def _free(self, p) -> bool:
        return all(np.linalg.norm(np.asarray(p) - q) >= MIN_OBJECT_SPACING for q in self.taken)

    def _reachable(self, p) -> bool:
        return self.ctx.nav_distance(p[0], p[1]) <= reach_radius(p[2]) - REACH_MARGIN

    def sample(self, where: str) -> Placement:
        for _ in range(PLACEMENT_ATTEMPTS):
            p, rid, cid = self._propose(where)
            if p is not None and self._free(p) and (cid is not None or self._reachable(p)):
                self.taken.append(np.asarray(p))
                return Placement(tuple(float(v) for v in p), rid, cid)
        raise RejectionBudgetError(f"could not place an object on {where} after {PLACEMENT_ATTEMPTS} attempts")

    def _propose(self, where: str):
        rng = self.rng
        if where.startswith("fridge"):
            c = self.layout.container("fridge")
            z = FRIDGE_SHELVES[where] + OBJECT_RADIUS
            u = rng.uniform(-0.3, -0.08)
            v = rng.uniform(-0.22, 0.22)
            x, y = c.front_frame.to_world(u, v)
            return (x, y, z), where, "fridge"
        if where.startswith("drawer"):
            c = self.layout.container(where)
            u = rng.uniform(-DRAWER_INTERIOR_DEPTH - 0.06, -DRAWER_INTERIOR_DEPTH + 0.06)
            v = rng.uniform(-0.15, 0.15)
            x, y = c.front_frame.to_world(u, v)
            return (x, y, DRAWER_INTERIOR_HEIGHT + OBJECT_RADIUS), where, where
        rec = self.layout.receptacle(where)
        s = rec.surface
        u, v = rng.uniform(-s.hx, s.hx), rng.uniform(-s.hy, s.hy)
        c, sn = math.cos(s.yaw), math.sin(s.yaw)
        return (s.cx + c * u - sn * v, s.cy + sn * u + c * v, rec.height + OBJECT_RADIUS), rec.id, None


def open_receptacles(layout: SceneLayout) -> list[str]:
    return [r.id for r in layout.receptacles]


def _episode_rng(seed: int, task: str, split: str, index: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng([seed, TASKS.index(task), SPLITS.index(split), index, attempt])


def _make_episode(task: str, layout: SceneLayout, rng, split: str, seed: int, index: int) -> EpisodeSpec:
    ctx = scene_context(layout)
    placer = _Placer(ctx, rng)
    opens = open_receptacles(layout)
    counters = [r.id for r in layout.receptacles if r.kind == "counter"]
    tables = [r.id for r in layout.receptacles if r.kind == "table"]
    pick = lambda seq: seq[int(rng.integers(len(seq)))]
    targets: list[Target] = []
    clutter: list[Placement] = []
    if task == "tidyhouse":
        for _ in range(5):
            a = pick(opens)
            b = pick([r for r in opens if r != a])
            targets.append(Target(placer.sample(a), placer.sample(b)))
        clutter = [placer.sample(pick(opens)) for _ in range(20)]
    elif task == "preparegroceries":
        for _ in range(2):
            targets.append(Target(placer.sample("fridge_middle"), placer.sample(pick(counters))))
        targets.append(Target(placer.sample(pick(counters)), placer.sample("fridge_middle")))
        clutter = [placer.sample(pick(opens + ["fridge_top"])) for _ in range(21)]
        clutter.append(placer.sample("fridge_middle"))
    elif task == "settable":
        drawers = [c.id for c in layout.containers if c.kind == "drawer"]
        targets.append(Target(placer.sample(pick(drawers)), placer.sample(pick(tables)), "bowl"))
        targets.append(Target(placer.sample("fridge_middle"), placer.sample(pick(tables)), "fruit"))
        clutter = [placer.sample(pick(opens + ["fridge_top"])) for _ in range(21)]
        clutter.append(placer.sample("fridge_middle"))
    elif task == "navroom":
        targets.append(Target(placer.sample(pick(opens)), placer.sample(pick(opens))))
    else:
        raise ValueError(f"unknown task {task!r}")
    return EpisodeSpec(
        episode_id=index, task=task, split=split, seed=seed,
        layout=LayoutRef(layout.seed, layout.macro_id, layout.micro_id),
        targets=tuple(targets), clutter=tuple(clutter),
    )


def generate_episodes(
    task: str,
    layouts: Optional[list[SceneLayout]],
    split: str,
    count: int,
    seed: int = 0,
    check_feasible: bool = True,
) -> list[EpisodeSpec]:
    """``count`` episodes spread round-robin over the split's scenes.

    ``task == "navroom"`` ignores ``layouts`` and uses 6 m x 6 m rooms.
    Each episode draws its own RNG stream from (seed, task, split, index).
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    from .sampler import episode_feasible

    scenes = None if task == "navroom" else split_scenes(layouts, split, seed)
    out = []
    for i in range(count):
        last_error: Optional[Exception] = None
        for attempt in range(EPISODE_ATTEMPTS):
            rng = _episode_rng(seed, task, split, i, attempt)
            if task == "navroom":
                base, n_rooms = NAV_ROOMS[split]
                layout = nav_room_layout(seed, base + i % n_rooms)
            else:
                layout = scenes[i % len(scenes)]
            try:
                ep = _make_episode(task, layout, rng, split, seed, i)
            except RejectionBudgetError as e:
                last_error = e
                continue
            if not check_feasible or episode_feasible(ep):
                out.append(ep)
                break
            last_error = LayoutInfeasibleError(f"episode {i} failed the feasibility check")
        else:
            raise last_error
    return out


# -- initial world state -----------------------------------------------------


def initial_joints(task: str) -> dict:
    if task == "preparegroceries":
        return {"fridge": FRIDGE_MAX}
    return {}


def make_scene(episode: EpisodeSpec, robot_base: Pose2D, joints: Optional[dict] = None) -> SceneState:
    """World state at the start of an episode with the robot at ``robot_base``."""
    layout = episode.layout.resolve()
    ctx = scene_context(layout)
    joints = dict(initial_joints(episode.task), **(joints or {}))
    containers = tuple(
        ContainerState(c.id, c.kind, float(joints.get(c.id, 0.0)), c.front_frame) for c in layout.containers
    )
    by_id = {c.id: c for c in containers}
    objects = []

    def obj(oid, pl: Placement, goal):
        pos = np.array(pl.position, dtype=float)
        local = None
        if pl.container is not None and by_id[pl.container].kind == "drawer":
            c = by_id[pl.container]
            local = c.world_to_frame(pos)
            pos = c.frame_to_world(local + np.array([c.joint, 0.0, 0.0]))
        return ObjectState(oid, pos, np.array(pl.position, dtype=float), goal, False, pl.container, local)

    for i, t in enumerate(episode.targets):
        objects.append(obj(f"target_{i}", t.start, np.array(t.goal.position, dtype=float)))
    for j, c in enumerate(episode.clutter):
        objects.append(obj(f"clutter_{j}", c, None))
    return SceneState(RobotState(robot_base), tuple(objects), containers, grid=ctx.grid)
