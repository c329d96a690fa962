"""Skill specifications, discrete navigation actions, proprioceptive
termination and scripted oracle controllers.

A :class:`SkillSpec` names what to do (kind, 3D target, variant). A
:class:`SkillBinding` attaches a spec to a concrete scene: it knows the goal
region, how to measure distances and how to score a step. Controllers
(scripted here, learned in :mod:`mobilemanip.rl`) map states to actions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .episodes import SceneContext, reach_radius
from .geometry import Pose2D, angle_diff, bearing, wrap_angle, world_to_base
from .navgrid import DistanceField, GoalRegion, OffNavmeshError
from .rewards import (
    POINT_NAV,
    REGION_NAV,
    NavRewardConfig,
    RewardOutput,
    SkillRewardConfig,
    StepContext,
    point_goal_reward,
    region_goal_reward,
    skill_reward,
    skill_reward_config,
)
from .sampler import CandidateSet, SkillSite, site_candidates, site_stationary_start
from .world import (
    DEFAULT_WORLD,
    DRAWER_MAX,
    FRIDGE_MAX,
    HANDLE_PREFIX,
    REST_EE,
    Action,
    Measurements,
    SceneState,
    WorldConfig,
    apply_action,
    measure,
    release,
)

NAV_LINEAR = (-0.5, 0.0, 0.5, 1.0)
NAV_ANGULAR = (-1.0, -0.5, 0.0, 0.5, 1.0)
N_NAV_ACTIONS = len(NAV_LINEAR) * len(NAV_ANGULAR)
STOP_INDEX = 1 * len(NAV_ANGULAR) + 2

MANIP_SKILLS = ("pick", "place", "open_drawer", "close_drawer", "open_fridge", "close_fridge")
SKILLS = ("navigate",) + MANIP_SKILLS
VARIANTS = ("mobile", "stationary")
NAV_MODES = ("region", "point")

MANIP_BUDGET = 200
NAV_BUDGET = 500
TERMINATE_REST = 0.15
TERMINATE_EXCURSION = 0.30

# container joint targets for the scripted controllers
OPEN_DRAWER_TARGET = 0.47
OPEN_FRIDGE_TARGET = math.pi / 2 + 0.2
CLOSE_TARGET = 0.0
# out-of-region rectangles (x0, y0, x1, y1) in the container front frame
OUT_REGION = {"drawer": (0.0, -1.5, 2.0, 1.5), "fridge": (0.0, -1.6, 2.0, 1.6)}
# base poses the mobile controllers drive to before touching a handle, in the front frame
WORK_POSE = {"drawer": (0.85, 0.0), "fridge": (0.8, -0.1)}


class SkillConfigError(ValueError):
    pass


# -- discrete navigation actions ------------------------------------------------


@dataclass(frozen=True)
class DiscreteNavAction:
    linear: int
    angular: int

    def __post_init__(self):
        if not (0 <= self.linear < len(NAV_LINEAR) and 0 <= self.angular < len(NAV_ANGULAR)):
            raise IndexError(f"discrete action ({self.linear}, {self.angular}) out of range")

    @property
    def index(self) -> int:
        return self.linear * len(NAV_ANGULAR) + self.angular

    @classmethod
    def from_index(cls, i: int) -> "DiscreteNavAction":
        if not 0 <= i < N_NAV_ACTIONS:
            raise IndexError(f"discrete action index {i} out of range")
        return cls(*divmod(int(i), len(NAV_ANGULAR)))

    @property
    def is_stop(self) -> bool:
        return NAV_LINEAR[self.linear] == 0.0 and NAV_ANGULAR[self.angular] == 0.0


def translate_action(d: DiscreteNavAction) -> tuple[Action, bool]:
    """Continuous action (arm and gripper masked) and the stop flag."""
    return Action(base=(NAV_LINEAR[d.linear], NAV_ANGULAR[d.angular])), d.is_stop


# -- specifications --------------------------------------------------------------


@dataclass(frozen=True)
class SkillSpec:
    """One skill invocation: kind, 3D target and execution variant.

    ``next`` is set for navigation and names the skill whose start it must
    reach. ``object_index`` selects ``target_<i>`` for pick and place.
    """

    name: str
    target: tuple
    variant: str = "mobile"
    container: Optional[str] = None
    object_index: Optional[int] = None
    nav_mode: str = "region"
    next: Optional["SkillSpec"] = None

    def __post_init__(self):
        if self.name not in SKILLS:
            raise SkillConfigError(f"unknown skill {self.name!r}")
        if self.variant not in VARIANTS:
            raise SkillConfigError(f"unknown variant {self.variant!r}")
        if self.nav_mode not in NAV_MODES:
            raise SkillConfigError(f"unknown navigation mode {self.nav_mode!r}")

    @property
    def container_kind(self) -> Optional[str]:
        if self.name.endswith("drawer"):
            return "drawer"
        if self.name.endswith("fridge"):
            return "fridge"
        return None

    @property
    def effective_variant(self) -> str:
        # fridge skills have a single start region and always move the base
        return "mobile" if self.container_kind == "fridge" else self.variant

    @property
    def base_masked(self) -> bool:
        return self.name != "navigate" and self.effective_variant == "stationary"

    @property
    def budget(self) -> int:
        return NAV_BUDGET if self.name == "navigate" else MANIP_BUDGET

    @property
    def object_id(self) -> Optional[str]:
        return None if self.object_index is None else f"target_{self.object_index}"

    @property
    def label(self) -> str:
        names = {"navigate": "Navigate", "pick": "Pick", "place": "Place", "open_drawer": "Open",
                 "close_drawer": "Close", "open_fridge": "Open", "close_fridge": "Close"}
        sub = ""
        ref = self.next if self.name == "navigate" and self.next is not None else self
        if ref.container is not None:
            sub = "_fr" if ref.container == "fridge" else "_dr"
        return f"{names[self.name]}{sub}"

    def site(self, front_frame: Optional[Pose2D]) -> SkillSite:
        return SkillSite(self.name, tuple(self.target), self.container, front_frame)


# -- termination ------------------------------------------------------------------


@dataclass(frozen=True)
class Proprio:
    """What a skill may know about itself when deciding to stop."""

    ee: np.ndarray  # base frame
    holding: bool
    max_excursion: float
    stop: bool = False

    @property
    def d_ee_r(self) -> float:
        return float(np.linalg.norm(np.asarray(self.ee) - REST_EE))


@dataclass(frozen=True)
class Termination:
    terminate: bool
    declared_success: bool


def check_termination(kind: str, proprio: Proprio, step: int) -> Termination:
    """Stop rules for chained execution; ``step`` counts steps already taken."""
    if kind == "navigate":
        if proprio.stop:
            return Termination(True, True)
        budget = NAV_BUDGET
    else:
        budget = MANIP_BUDGET
        near_rest = proprio.d_ee_r <= TERMINATE_REST
        if kind == "pick" and proprio.holding and near_rest:
            return Termination(True, True)
        if kind == "place" and not proprio.holding and near_rest:
            return Termination(True, True)
        if kind not in ("pick", "place") and near_rest and proprio.max_excursion >= TERMINATE_EXCURSION:
            return Termination(True, True)
    if step >= budget:
        return Termination(True, False)
    return Termination(False, False)


# -- binding a spec to a scene ------------------------------------------------------


class SkillBinding:
    """A skill spec resolved against a scene: goal region, measurements, reward.

    ``point_goal`` overrides the navigation goal cell for point-goal
    navigation; by default the stationary start of the next skill is used.
    """

    def __init__(
        self,
        spec: SkillSpec,
        ctx: SceneContext,
        nav_cfg: Optional[NavRewardConfig] = None,
        skill_cfg: Optional[SkillRewardConfig] = None,
        point_goal: Optional[int] = None,
        radius: float = 2.0,
        world: WorldConfig = DEFAULT_WORLD,
    ):
        self.spec = spec
        self.ctx = ctx
        self.grid = ctx.grid
        self.world = world
        self.radius = radius
        frames = {c.id: c.front_frame for c in ctx.layout.containers}
        self.front_frame = frames.get(spec.container)
        self.region: Optional[CandidateSet] = None
        self.field: Optional[DistanceField] = None
        self.facing: Optional[float] = None
        if spec.name == "navigate":
            if spec.next is None:
                raise SkillConfigError("navigation needs the skill it leads to")
            nxt = spec.next
            site = nxt.site(frames.get(nxt.container))
            self.nav_target = tuple(nxt.target)
            if spec.nav_mode == "region":
                self.region = site_candidates(self.grid, site, nxt.effective_variant == "mobile", radius)
                key = ("region", site, nxt.effective_variant, radius)
                self.field = ctx.field(key, self.region.cells)
                self.nav_cfg = nav_cfg or REGION_NAV
            else:
                if point_goal is None:
                    start = site_stationary_start(self.grid, site)
                    point_goal = self.grid.snap(start.x, start.y)
                gx, gy = self.grid.index_center(point_goal)
                self.point_goal = int(point_goal)
                self.region = CandidateSet(GoalRegion(self.grid, [point_goal]), "closest_navigable", ())
                self.field = ctx.field(("point", int(point_goal)), [point_goal])
                self.facing = bearing((gx, gy), self.nav_target)
                self.nav_cfg = nav_cfg or POINT_NAV
        else:
            self.skill_cfg = skill_cfg or skill_reward_config(spec.name)

    # -- measurement and scoring ------------------------------------------------

    @property
    def expected_hold(self) -> Optional[str]:
        s = self.spec
        if s.name in ("pick", "place"):
            return s.object_id
        if s.container is not None and s.name != "navigate":
            return HANDLE_PREFIX + s.container
        return None

    def measure(self, state: SceneState) -> Measurements:
        s = self.spec
        if s.name == "navigate":
            return measure(state, self.nav_target, field=self.field, facing=self.facing)
        if s.name == "pick":
            return measure(state, s.target, obj_id=s.object_id)
        if s.name == "place":
            return measure(state, s.target, obj_id=s.object_id, goal=s.target)
        return measure(state, s.target, container_id=s.container, joint_goal=self.skill_cfg.joint_goal)

    def out_of_region(self, state: SceneState) -> bool:
        kind = self.spec.container_kind
        if kind is None or self.front_frame is None:
            return False
        u, v = self.front_frame.to_local(state.robot.base.x, state.robot.base.y)
        x0, y0, x1, y1 = OUT_REGION[kind]
        return not (x0 <= u <= x1 and y0 <= v <= y1)

    def step_context(
        self,
        prev: SceneState,
        cur: SceneState,
        prev_m: Measurements,
        cur_m: Measurements,
        action: Action,
        stop: bool = False,
        first_step: bool = False,
    ) -> StepContext:
        want = self.expected_hold
        before, after = prev.robot.holding, cur.robot.holding
        grabbed = before is None and after is not None
        return StepContext(
            prev=prev_m,
            cur=cur_m,
            holding=want is not None and after == want,
            grasped=grabbed and after == want,
            released=before is not None and before == want and after is None,
            wrong_grasp=grabbed and after != want,
            collision_step=cur.collision_force_step,
            collision_accum=cur.collision_force_accum,
            base_action=tuple(action.base),
            stop=stop,
            out_of_region=self.out_of_region(cur),
            first_step=first_step,
        )

    def reward(self, ctx: StepContext) -> RewardOutput:
        s = self.spec
        if s.name == "navigate":
            if s.nav_mode == "region":
                return region_goal_reward(ctx, self.nav_cfg)
            return point_goal_reward(ctx, self.nav_cfg)
        return skill_reward(s.name, ctx, self.skill_cfg)

    # -- action masks -----------------------------------------------------------

    def mask(self, action: Action, state: SceneState, released_once: bool) -> Action:
        s = self.spec
        base, arm, grip = action.base, action.arm, action.grip
        if s.name == "navigate":
            return Action(base=base)
        if s.base_masked:
            base = (0.0, 0.0)
        if s.name == "pick" and grip < 0:
            grip = 0.0  # pick cannot release
        if s.name == "place" and grip > 0:
            grip = 0.0  # place cannot grasp
        return Action(base, arm, grip)

    def base_scale(self) -> float:
        return self.world.nav_base_scale if self.spec.name == "navigate" else self.world.manip_base_scale


# -- scripted controllers -------------------------------------------------------------


def _line_of_sight(grid, x0, y0, x1, y1, step=0.025) -> bool:
    n = max(int(math.hypot(x1 - x0, y1 - y0) / step), 1)
    t = np.arange(1, n + 1) / n
    ix = np.floor((x0 + t * (x1 - x0) - grid.origin[0]) / grid.resolution).astype(np.int64)
    iy = np.floor((y0 + t * (y1 - y0) - grid.origin[1]) / grid.resolution).astype(np.int64)
    h, w = grid.navigable.shape
    if ix.min() < 0 or iy.min() < 0 or ix.max() >= w or iy.max() >= h:
        return False
    return bool(grid.navigable[iy, ix].all())


_NEIGHBOURS = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]


def descent_waypoint(field: DistanceField, x: float, y: float, lookahead: int = 16) -> Optional[tuple]:
    """Farthest visible cell along steepest descent of ``field`` from (x, y)."""
    grid = field.grid
    try:
        idx = grid.snap(x, y)
    except OffNavmeshError:
        return None
    m = field.meters
    h, w = m.shape
    cx, cy = grid.unravel(idx)
    path = [(cx, cy)]
    for _ in range(lookahead):
        best, best_d = None, m[cy, cx]
        for dx, dy in _NEIGHBOURS:
            nx, ny = cx + dx, cy + dy
            if 0 <= nx < w and 0 <= ny < h and m[ny, nx] < best_d:
                best, best_d = (nx, ny), m[ny, nx]
        if best is None:
            break
        cx, cy = best
        path.append(best)
    for ix, iy in reversed(path):
        wx, wy = grid.cell_to_world(ix, iy)
        if _line_of_sight(grid, x, y, wx, wy):
            return wx, wy
    return grid.cell_to_world(*path[min(1, len(path) - 1)])


def _steer(pose: Pose2D, wx: float, wy: float, scale: float, dt: float, turn_first: float = 0.35):
    """Continuous (linear, angular) in [-1, 1] that drives toward (wx, wy)."""
    err = wrap_angle(bearing((pose.x, pose.y), (wx, wy)) - pose.theta)
    per = scale * dt
    ang = max(-1.0, min(1.0, err / per))
    dist = math.hypot(wx - pose.x, wy - pose.y)
    if abs(err) > turn_first:
        return 0.0, ang
    return max(0.0, min(1.0, dist / per)), ang


def _nearest_choice(value: float, choices) -> int:
    return int(np.argmin([abs(value - c) for c in choices]))


class Controller:
    """Maps a state to an action; ``stop`` is only meaningful for navigation."""

    def reset(self, state: SceneState) -> None:
        pass

    def act(self, state: SceneState) -> tuple[Action, bool]:
        raise NotImplementedError


class OracleNavigate(Controller):
    """Follow the geodesic field downhill, then turn to the target and stop."""

    def __init__(self, binding: SkillBinding):
        self.b = binding
        cfg = binding.nav_cfg
        # region goals count as reached within one diagonal step of the region
        self.arrive = cfg.success_dist if binding.spec.nav_mode == "region" else cfg.success_dist / 2
        self.align = cfg.success_ang / 2

    def _discrete(self, lin: float, ang: float) -> tuple[Action, bool]:
        d = DiscreteNavAction(_nearest_choice(lin, NAV_LINEAR), _nearest_choice(ang, NAV_ANGULAR))
        if d.is_stop:
            # the zero action means stop; nudge instead
            d = DiscreteNavAction(d.linear, 1 if ang < 0 else 3) if ang != 0 else DiscreteNavAction(2, 2)
        return translate_action(d)

    def act(self, state: SceneState) -> tuple[Action, bool]:
        b = self.b
        pose = state.robot.base
        scale, dt = b.world.nav_base_scale, b.world.dt
        try:
            d = b.field.at(pose.x, pose.y)
        except OffNavmeshError:
            d = math.inf
        single = len(b.region) == 1
        if single and d < 0.6:
            # final approach straight at the goal cell center
            gx, gy = b.grid.index_center(int(b.region.cells.cells[0]))
            dist = math.hypot(gx - pose.x, gy - pose.y)
            if dist > 0.06 and d > self.arrive:
                err = wrap_angle(bearing((pose.x, pose.y), (gx, gy)) - pose.theta)
                per = scale * dt
                if abs(err) > 0.1:
                    return self._discrete(0.0, err / per)
                return self._discrete(dist / per, 0.0)
        elif d > self.arrive:
            wp = descent_waypoint(b.field, pose.x, pose.y)
            if wp is None or not math.isfinite(d):
                return translate_action(DiscreteNavAction.from_index(STOP_INDEX))
            lin, ang = _steer(pose, wp[0], wp[1], scale, dt)
            if lin > 0:
                lin = 1.0 if d > 0.6 else 0.5
            return self._discrete(lin, ang)
        theta_star = b.facing if b.facing is not None else bearing((pose.x, pose.y), b.nav_target)
        err = wrap_angle(theta_star - pose.theta)
        if abs(err) <= self.align:
            return translate_action(DiscreteNavAction.from_index(STOP_INDEX))
        return self._discrete(0.0, err / (scale * dt))


def _arm_toward(ee: np.ndarray, target_base: np.ndarray, step: float) -> np.ndarray:
    return np.clip((np.asarray(target_base) - ee) / step, -1.0, 1.0)


class OracleManipulation(Controller):
    """Scripted pick, place, open and close.

    Mobile variants first drive the base until the point of interaction is
    comfortably within reach; stationary variants never move the base.
    """

    GRASP_TOL = 0.005

    def __init__(self, binding: SkillBinding):
        self.b = binding
        self.spec = binding.spec
        self.ctx = binding.ctx
        self._approach_field: dict = {}
        self._goal_cell: dict = {}
        self.reset(None)

    def reset(self, state: SceneState) -> None:
        self.released = False
        self._last_joint = None
        self._stalls = 0

    # -- base motion ------------------------------------------------------------

    def _field_to(self, x: float, y: float) -> DistanceField:
        cell = self._goal_cell.get((x, y))
        if cell is None:
            grid = self.ctx.grid
            xs, ys = grid.cell_centers
            idx = self.ctx.main_indices if self.ctx.main_indices.size else grid.navigable_indices
            cell = int(idx[np.argmin((xs[idx] - x) ** 2 + (ys[idx] - y) ** 2)])
            self._goal_cell[(x, y)] = cell
        f = self._approach_field.get(cell)
        if f is None:
            f = self.ctx.field(("cell", cell), [cell])
            self._approach_field[cell] = f
        return f

    def _drive(self, state: SceneState, gx: float, gy: float) -> tuple:
        pose = state.robot.base
        w = self.b.world
        f = self._field_to(gx, gy)
        try:
            d = f.at(pose.x, pose.y)
        except OffNavmeshError:
            return (0.0, 0.0)
        if d <= 0.05:
            return (0.0, 0.0)
        wp = descent_waypoint(f, pose.x, pose.y) or (gx, gy)
        return _steer(pose, wp[0], wp[1], w.manip_base_scale, w.dt)

    def _reachable(self, state: SceneState, p, margin: float = 0.12) -> bool:
        b = world_to_base(state.robot.base, p)
        return float(np.linalg.norm(b)) <= self.b.world.reach - margin

    def _move_ee(self, state: SceneState, target_world, base=(0.0, 0.0), grip=0.0) -> Action:
        tb = world_to_base(state.robot.base, target_world)
        return Action(base=tuple(base), arm=tuple(_arm_toward(state.robot.ee, tb, self.b.world.arm_step)), grip=grip)

    def _to_rest(self, state: SceneState) -> Action:
        return Action(arm=tuple(_arm_toward(state.robot.ee, REST_EE, self.b.world.arm_step)))

    def _approach(self, state: SceneState, point, drive_goal) -> Optional[Action]:
        """Drive closer (mobile only) while ``point`` is out of comfortable reach."""
        if self.spec.base_masked or self._reachable(state, point):
            return None
        base = self._drive(state, *drive_goal)
        if base == (0.0, 0.0):
            return None
        return Action(base=base, arm=tuple(_arm_toward(state.robot.ee, REST_EE, self.b.world.arm_step)))

    # -- policies -----------------------------------------------------------------

    def act(self, state: SceneState) -> tuple[Action, bool]:
        name = self.spec.name
        if name == "pick":
            return self._pick(state), False
        if name == "place":
            return self._place(state), False
        return self._container(state), False

    def _pick(self, state: SceneState) -> Action:
        oid = self.spec.object_id
        if state.robot.holding is not None:
            return self._to_rest(state)
        obj = state.object(oid).position
        a = self._approach(state, obj, (obj[0], obj[1]))
        if a is not None:
            return a
        ee = state.ee_world()
        if np.linalg.norm(ee - obj) <= self.GRASP_TOL:
            return Action(grip=1.0)
        return self._move_ee(state, obj)

    def _place(self, state: SceneState) -> Action:
        if state.robot.holding is None:
            self.released = True
        if self.released:
            return self._to_rest(state)
        goal = np.asarray(self.spec.target, dtype=float)
        a = self._approach(state, goal, (goal[0], goal[1]))
        if a is not None:
            return a
        if np.linalg.norm(state.ee_world() - goal) <= self.GRASP_TOL:
            self.released = True
            return Action(grip=-1.0)
        return self._move_ee(state, goal)

    def _container(self, state: SceneState) -> Action:
        c = state.container(self.spec.container)
        kind = c.kind
        opening = self.spec.name.startswith("open")
        target_q = (OPEN_DRAWER_TARGET if kind == "drawer" else OPEN_FRIDGE_TARGET) if opening else CLOSE_TARGET
        tol = 0.01 if kind == "drawer" else (0.15 if opening else 0.06)
        done = (c.joint >= target_q - tol) if opening else (c.joint <= target_q + tol)
        holding = state.robot.holding == c.handle_id
        stalled = self._last_joint is not None and abs(c.joint - self._last_joint) < 1e-4
        self._last_joint = c.joint if holding else None
        if holding:
            if done or (stalled and self._stalls >= 3):
                self.released = True
                return Action(grip=-1.0)
            self._stalls = self._stalls + 1 if stalled else 0
            if kind == "drawer":
                nxt = target_q
            else:
                step = 0.12
                nxt = c.joint + step if opening else c.joint - step
                nxt = min(max(nxt, 0.0), FRIDGE_MAX)
                nxt = min(nxt, target_q) if opening else max(nxt, target_q)
            return self._move_ee(state, c.handle(nxt))
        if done or self.released:
            return self._to_rest(state)
        if state.robot.holding is not None:
            return Action(grip=-1.0)
        handle = c.handle()
        wx, wy = c.front_frame.to_world(*WORK_POSE[kind])
        if not self.spec.base_masked:
            u, v = c.front_frame.to_local(state.robot.base.x, state.robot.base.y)
            far = math.hypot(u - WORK_POSE[kind][0], v - WORK_POSE[kind][1]) > 0.15
            if far and not self._reachable(state, c.handle(target_q), margin=0.15) or not self._reachable(state, handle):
                base = self._drive(state, wx, wy)
                if base != (0.0, 0.0):
                    return Action(base=base, arm=tuple(_arm_toward(state.robot.ee, REST_EE, self.b.world.arm_step)))
        if np.linalg.norm(state.ee_world() - handle) <= self.GRASP_TOL:
            return Action(grip=1.0)
        return self._move_ee(state, handle)


def oracle_controller(binding: SkillBinding) -> Controller:
    if binding.spec.name == "navigate":
        return OracleNavigate(binding)
    return OracleManipulation(binding)


# -- running one skill ---------------------------------------------------------------------


@dataclass
class SkillRun:
    """Outcome of executing one skill from some state."""

    state: SceneState
    steps: int
    reward: float
    success: bool  # reward-defined success
    failure: Optional[str]
    declared_success: bool  # termination-rule verdict
    history: list = field(default_factory=list)


def run_skill(
    binding: SkillBinding,
    controller: Controller,
    state: SceneState,
    stop_on: str = "reward",
    record: bool = False,
    step_hook=None,
) -> SkillRun:
    """Roll a controller out for one skill.

    ``stop_on="reward"`` ends on the reward's done flag (training semantics);
    ``stop_on="termination"`` ends on the proprioceptive termination rule
    (chaining semantics). Both end at the step budget.
    """
    spec = binding.spec
    controller.reset(state)
    prev_m = binding.measure(state)
    total = 0.0
    excursion = float(np.linalg.norm(state.robot.ee - REST_EE))
    success, failure, declared = False, None, False
    history = []
    released_once = False
    steps = 0
    while True:
        raw, stop = controller.act(state)
        action = binding.mask(raw, state, released_once)
        nxt = apply_action(state, action, base_scale=binding.base_scale(), cfg=binding.world)
        steps += 1
        cur_m = binding.measure(nxt)
        ctx = binding.step_context(state, nxt, prev_m, cur_m, action, stop=stop, first_step=steps == 1)
        out = binding.reward(ctx)
        total += out.reward
        if state.robot.holding is not None and nxt.robot.holding is None:
            released_once = True
        excursion = max(excursion, float(np.linalg.norm(nxt.robot.ee - REST_EE)))
        if record:
            history.append((action, stop, out))
        state, prev_m = nxt, cur_m
        if step_hook is not None:
            step_hook(state)
        if out.success:
            success = True
        if out.failure is not None and failure is None and not success:
            failure = out.failure
        if stop_on == "reward":
            if out.done:
                break
            if steps >= spec.budget:
                declared = False
                break
        else:
            proprio = Proprio(state.robot.ee, state.robot.holding is not None, excursion, stop)
            term = check_termination(spec.name, proprio, steps)
            if term.terminate:
                declared = term.declared_success
                break
    if stop_on == "termination" and spec.name == "place":
        state = release(state)
    return SkillRun(state, steps, total, success, failure, declared, history)
