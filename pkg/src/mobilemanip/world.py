"""Kinematic rearrangement world: base, end-effector point, abstract grasp,
drawers and fridge joints, and synthetic collision force.

All states are immutable values; :func:`apply_action` returns a new state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .geometry import Pose2D, angle_diff, base_to_world, bearing, world_to_base
from .navgrid import DistanceField, GridMap, OffNavmeshError

STATE_SCHEMA_VERSION = 1

REST_EE = np.array([0.5, 1.0, 0.0])
REST_EE.setflags(write=False)

DRAWER_MAX = 0.5
FRIDGE_MAX = 2.356
DRAWER_HANDLE_HEIGHT = 0.5
DRAWER_HANDLE_OFFSET = 0.02
DRAWER_INTERIOR_HEIGHT = 0.4
DRAWER_INTERIOR_DEPTH = 0.22
FRIDGE_HINGE_LATERAL = 0.3
FRIDGE_DOOR_RADIUS = 0.55
FRIDGE_HANDLE_HEIGHT = 0.8
FRIDGE_DEPTH = 0.7
FRIDGE_HALF_WIDTH = 0.35
# Objects inside a container can only be grasped once it is open this far.
DRAWER_ACCESS_JOINT = 0.25
FRIDGE_ACCESS_JOINT = 1.2

HANDLE_PREFIX = "handle:"


@dataclass(frozen=True)
class WorldConfig:
    dt: float = 0.1
    nav_base_scale: float = 3.0
    manip_base_scale: float = 1.5
    arm_step: float = 0.05
    reach: float = 1.2
    grasp_radius: float = 0.15
    force_per_meter: float = 1000.0


DEFAULT_WORLD = WorldConfig()


@dataclass(frozen=True)
class Action:
    """Normalized action: base (linear, angular), arm (dx, dy, dz), grip."""

    base: tuple = (0.0, 0.0)
    arm: tuple = (0.0, 0.0, 0.0)
    grip: float = 0.0

    @classmethod
    def from_vector(cls, v) -> "Action":
        v = [float(a) for a in v]
        return cls((v[0], v[1]), (v[2], v[3], v[4]), v[5])

    def vector(self) -> np.ndarray:
        return np.array([*self.base, *self.arm, self.grip], dtype=float)


@dataclass(frozen=True)
class RobotState:
    base: Pose2D
    ee: np.ndarray = field(default_factory=lambda: REST_EE.copy())
    holding: Optional[str] = None

    def ee_world(self) -> np.ndarray:
        return base_to_world(self.base, self.ee)


@dataclass(frozen=True)
class ObjectState:
    id: str
    position: np.ndarray
    start: np.ndarray
    goal: Optional[np.ndarray] = None
    held: bool = False
    # container id and position in the container front frame at joint 0
    container: Optional[str] = None
    local: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ContainerState:
    id: str
    kind: str  # "drawer" | "fridge"
    joint: float
    front_frame: Pose2D
    lateral: float = 0.0  # drawers: handle offset along the front face

    @property
    def joint_limits(self) -> tuple[float, float]:
        return (0.0, DRAWER_MAX) if self.kind == "drawer" else (0.0, FRIDGE_MAX)

    @property
    def handle_id(self) -> str:
        return HANDLE_PREFIX + self.id

    def handle_local(self, joint: Optional[float] = None) -> np.ndarray:
        q = self.joint if joint is None else joint
        if self.kind == "drawer":
            return np.array([DRAWER_HANDLE_OFFSET + q, self.lateral, DRAWER_HANDLE_HEIGHT])
        return np.array(
            [
                FRIDGE_DOOR_RADIUS * math.sin(q),
                FRIDGE_HINGE_LATERAL - FRIDGE_DOOR_RADIUS * math.cos(q),
                FRIDGE_HANDLE_HEIGHT,
            ]
        )

    def handle(self, joint: Optional[float] = None) -> np.ndarray:
        return self.frame_to_world(self.handle_local(joint))

    def frame_to_world(self, p) -> np.ndarray:
        x, y = self.front_frame.to_world(float(p[0]), float(p[1]))
        return np.array([x, y, float(p[2])])

    def world_to_frame(self, p) -> np.ndarray:
        u, v = self.front_frame.to_local(float(p[0]), float(p[1]))
        return np.array([u, v, float(p[2])])

    def is_accessible(self) -> bool:
        limit = DRAWER_ACCESS_JOINT if self.kind == "drawer" else FRIDGE_ACCESS_JOINT
        return self.joint >= limit

    def follow(self, ee_world: np.ndarray) -> float:
        """Joint value that brings the handle as close as possible to ``ee_world``."""
        lo, hi = self.joint_limits
        p = self.world_to_frame(ee_world)
        if self.kind == "drawer":
            q = self.joint + (p[0] - self.handle_local()[0])
        else:
            q = math.atan2(p[0], FRIDGE_HINGE_LATERAL - p[1])
            if q < lo:
                # behind the hinge: clamp to whichever limit is nearer around the circle
                q = lo if (lo - q) <= (q + 2 * math.pi - hi) else hi
        return min(max(q, lo), hi)


@dataclass(frozen=True, eq=False)
class SceneState:
    robot: RobotState
    objects: tuple = ()
    containers: tuple = ()
    step_count: int = 0
    collision_force_step: float = 0.0
    collision_force_accum: float = 0.0
    grid: Optional[GridMap] = field(default=None, repr=False, compare=False)

    def object(self, oid: str) -> ObjectState:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def container(self, cid: str) -> ContainerState:
        for c in self.containers:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def held_object(self) -> Optional[ObjectState]:
        for o in self.objects:
            if o.held:
                return o
        return None

    def holding_handle(self) -> Optional[ContainerState]:
        h = self.robot.holding
        if h is not None and h.startswith(HANDLE_PREFIX):
            return self.container(h[len(HANDLE_PREFIX):])
        return None

    def ee_world(self) -> np.ndarray:
        return self.robot.ee_world()

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        def vec(a):
            return None if a is None else [float(x) for x in a]

        return {
            "schema": STATE_SCHEMA_VERSION,
            "step": self.step_count,
            "robot": {
                "base": self.robot.base.to_dict(),
                "ee": vec(self.robot.ee),
                "holding": self.robot.holding,
            },
            "objects": [
                {
                    "id": o.id,
                    "position": vec(o.position),
                    "start": vec(o.start),
                    "goal": vec(o.goal),
                    "held": o.held,
                    "container": o.container,
                    "local": vec(o.local),
                }
                for o in self.objects
            ],
            "containers": [
                {
                    "id": c.id,
                    "kind": c.kind,
                    "joint": c.joint,
                    "front_frame": c.front_frame.to_dict(),
                    "lateral": c.lateral,
                }
                for c in self.containers
            ],
            "collision_force_step": self.collision_force_step,
            "collision_force_accum": self.collision_force_accum,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict, grid: Optional[GridMap] = None) -> "SceneState":
        if d.get("schema") != STATE_SCHEMA_VERSION:
            raise ValueError(f"unsupported state schema {d.get('schema')}")

        def arr(v):
            return None if v is None else np.array(v, dtype=float)

        r = d["robot"]
        return cls(
            robot=RobotState(Pose2D.from_dict(r["base"]), arr(r["ee"]), r["holding"]),
            objects=tuple(
                ObjectState(
                    o["id"], arr(o["position"]), arr(o["start"]), arr(o["goal"]),
                    o["held"], o["container"], arr(o["local"]),
                )
                for o in d["objects"]
            ),
            containers=tuple(
                ContainerState(c["id"], c["kind"], c["joint"], Pose2D.from_dict(c["front_frame"]), c["lateral"])
                for c in d["containers"]
            ),
            step_count=d["step"],
            collision_force_step=d["collision_force_step"],
            collision_force_accum=d["collision_force_accum"],
            grid=grid,
        )


# -- kinematics -------------------------------------------------------------


def move_base(
    grid: Optional[GridMap], pose: Pose2D, linear: float, angular: float, scale: float, dt: float
) -> tuple[Pose2D, float]:
    """Integrate one base step; returns (new pose, attempted penetration in m).

    Translation along the current heading is checked against the grid; a
    blocked move slides along whichever axis stays free, and the blocked part
    of the displacement is reported as penetration. Rotation is never blocked.
    """
    linear = min(max(linear, -1.0), 1.0)
    angular = min(max(angular, -1.0), 1.0)
    dist = linear * scale * dt
    theta = pose.theta + angular * scale * dt
    if dist == 0.0:
        return Pose2D(pose.x, pose.y, theta), 0.0
    dx = dist * math.cos(pose.theta)
    dy = dist * math.sin(pose.theta)

    def free(x, y):
        if grid is None:
            return True
        return grid.is_navigable_xy(x, y) and grid.is_navigable_xy(
            pose.x + (x - pose.x) / 2, pose.y + (y - pose.y) / 2
        )

    if free(pose.x + dx, pose.y + dy):
        return Pose2D(pose.x + dx, pose.y + dy, theta), 0.0
    best = (0.0, 0.0)
    for cand in ((dx, 0.0), (0.0, dy)):
        if (abs(cand[0]) + abs(cand[1])) > (abs(best[0]) + abs(best[1])) and free(
            pose.x + cand[0], pose.y + cand[1]
        ):
            best = cand
    pen = math.hypot(dx - best[0], dy - best[1])
    return Pose2D(pose.x + best[0], pose.y + best[1], theta), pen


def clamp_reach(ee: np.ndarray, reach: float) -> np.ndarray:
    ee = np.array(ee, dtype=float)
    ee[1] = max(ee[1], 0.0)
    n = float(np.linalg.norm(ee))
    if n > reach:
        ee *= reach / n
    return ee


def graspable(state: SceneState, ee_world: np.ndarray, radius: float) -> Optional[str]:
    """Id of the closest object or handle within ``radius`` of the end-effector."""
    best_id, best_d = None, radius
    containers = {c.id: c for c in state.containers}
    for o in state.objects:
        if o.held:
            continue
        if o.container is not None and not containers[o.container].is_accessible():
            continue
        d = float(np.linalg.norm(o.position - ee_world))
        if d <= best_d and (best_id is None or d < best_d):
            best_id, best_d = o.id, d
    for c in state.containers:
        d = float(np.linalg.norm(c.handle() - ee_world))
        if d <= best_d and (best_id is None or d < best_d):
            best_id, best_d = c.handle_id, d
    return best_id


def _container_objects(objects, containers_by_id, changed: set) -> tuple:
    """Re-derive positions of objects resting in drawers whose joints changed."""
    out = []
    for o in objects:
        if o.container in changed and not o.held and o.local is not None:
            c = containers_by_id[o.container]
            if c.kind == "drawer":
                o = replace(o, position=c.frame_to_world(o.local + np.array([c.joint, 0.0, 0.0])))
        out.append(o)
    return tuple(out)


def apply_action(
    state: SceneState,
    action: Action,
    base_scale: Optional[float] = None,
    cfg: WorldConfig = DEFAULT_WORLD,
) -> SceneState:
    """Advance the world by one control step of ``cfg.dt`` seconds."""
    scale = cfg.manip_base_scale if base_scale is None else base_scale
    robot = state.robot
    base, pen = move_base(state.grid, robot.base, action.base[0], action.base[1], scale, cfg.dt)
    arm = np.clip(np.asarray(action.arm, dtype=float), -1.0, 1.0)
    if arm.any():
        ee = clamp_reach(robot.ee + arm * cfg.arm_step, cfg.reach)
    else:
        ee = robot.ee
    holding = robot.holding
    ee_world = base_to_world(base, ee)

    containers = state.containers
    changed: set = set()
    if holding is not None and holding.startswith(HANDLE_PREFIX):
        cid = holding[len(HANDLE_PREFIX):]
        new = []
        for c in containers:
            if c.id == cid:
                q = c.follow(ee_world)
                if q != c.joint:
                    c = replace(c, joint=q)
                    changed.add(c.id)
            new.append(c)
        containers = tuple(new)

    objects = state.objects
    grip = float(action.grip)
    if grip > 0 and holding is None:
        tmp = replace(state, objects=objects, containers=containers)
        gid = graspable(tmp, ee_world, cfg.grasp_radius)
        if gid is not None:
            holding = gid
            if not gid.startswith(HANDLE_PREFIX):
                objects = tuple(
                    replace(o, held=True, container=None, local=None) if o.id == gid else o
                    for o in objects
                )
    elif grip < 0 and holding is not None:
        if not holding.startswith(HANDLE_PREFIX):
            objects = tuple(replace(o, held=False) if o.id == holding else o for o in objects)
        holding = None

    if changed:
        objects = _container_objects(objects, {c.id: c for c in containers}, changed)
    if holding is not None and not holding.startswith(HANDLE_PREFIX):
        objects = tuple(replace(o, position=ee_world) if o.held else o for o in objects)

    force = pen * cfg.force_per_meter
    return SceneState(
        robot=RobotState(base, ee, holding),
        objects=objects,
        containers=containers,
        step_count=state.step_count + 1,
        collision_force_step=force,
        collision_force_accum=state.collision_force_accum + force,
        grid=state.grid,
    )


def reset_arm(state: SceneState) -> SceneState:
    """Put the end-effector at rest. Held objects follow; handles are let go."""
    robot = state.robot
    holding = robot.holding
    objects = state.objects
    if holding is not None and holding.startswith(HANDLE_PREFIX):
        holding = None
    robot = RobotState(robot.base, REST_EE.copy(), holding)
    if holding is not None:
        ee_world = robot.ee_world()
        objects = tuple(replace(o, position=ee_world) if o.held else o for o in objects)
    return replace(state, robot=robot, objects=objects)


def release(state: SceneState) -> SceneState:
    """Open the gripper without moving anything."""
    holding = state.robot.holding
    if holding is None:
        return state
    objects = state.objects
    if not holding.startswith(HANDLE_PREFIX):
        objects = tuple(replace(o, held=False) if o.id == holding else o for o in objects)
    return replace(state, robot=replace(state.robot, holding=None), objects=objects)


# -- measurements ----------------------------------------------------------


@dataclass(frozen=True)
class Measurements:
    """Distances used by the reward functions; ``nan`` where not applicable."""

    d_ee_o: float = math.nan
    d_ee_r: float = math.nan
    d_o_goal: float = math.nan
    d_ee_h: float = math.nan
    d_a_g: float = math.nan
    d_geo: float = math.nan
    d_ang: float = math.nan
    joint: float = math.nan


def joint_distance(container: ContainerState, joint_goal: float, one_sided: bool = False) -> float:
    if one_sided:
        return max(joint_goal - container.joint, 0.0)
    return abs(container.joint - joint_goal)


def measure(
    state: SceneState,
    target: Sequence[float],
    *,
    obj_id: Optional[str] = None,
    goal: Optional[Sequence[float]] = None,
    container_id: Optional[str] = None,
    joint_goal: Optional[float] = None,
    one_sided_joint: bool = False,
    field: Optional[DistanceField] = None,
    facing: Optional[float] = None,
) -> Measurements:
    """Distances between end-effector, target, object, goal, handle and base.

    ``facing`` overrides the desired base heading; by default it is the
    bearing from the base to the target's floor projection.
    """
    robot = state.robot
    ee_w = robot.ee_world()
    target = np.asarray(target, dtype=float)
    obj_pos = state.object(obj_id).position if obj_id is not None else target
    d_ee_o = float(np.linalg.norm(ee_w - obj_pos))
    d_ee_r = float(np.linalg.norm(robot.ee - REST_EE))
    d_o_goal = math.nan
    if goal is not None:
        d_o_goal = float(np.linalg.norm(obj_pos - np.asarray(goal, dtype=float)))
    d_ee_h = d_a_g = joint = math.nan
    if container_id is not None:
        c = state.container(container_id)
        joint = c.joint
        d_ee_h = float(np.linalg.norm(ee_w - c.handle()))
        if joint_goal is not None:
            d_a_g = joint_distance(c, joint_goal, one_sided_joint)
    d_geo = math.nan
    if field is not None:
        try:
            d_geo = field.at(robot.base.x, robot.base.y)
        except OffNavmeshError:
            d_geo = math.inf
    theta_star = bearing((robot.base.x, robot.base.y), target) if facing is None else facing
    d_ang = angle_diff(robot.base.theta, theta_star)
    return Measurements(d_ee_o, d_ee_r, d_o_goal, d_ee_h, d_a_g, d_geo, d_ang, joint)


def target_in_base(state: SceneState, target) -> np.ndarray:
    return world_to_base(state.robot.base, target)
