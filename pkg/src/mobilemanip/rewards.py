"""Navigation and manipulation rewards with success and failure logic.

Every function is a pure function of a :class:`StepContext` (the
measurements before and after one environment step plus event flags) and a
config holding the constants. Event bonuses fire once, on the step where the
event happens.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .world import Measurements

# failure kinds
COLLISION_BUDGET = "collision_budget"
WRONG_GRASP = "wrong_grasp"
SLIP = "slip"
DROP = "drop"
OUT_OF_REGION = "out_of_region"
REGRESSION = "regression"
PREMATURE_RELEASE = "premature_release"
TOO_FAST = "too_fast"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class NavRewardConfig:
    r_slack: float = 0.002
    lambda_ang: float = 0.25
    lambda_succ: float = 2.5
    d_tilde: float = 0.9
    success_dist: float = 0.3
    success_ang: float = 0.5
    col_scale: float = 0.001
    col_cap: float = 0.2
    # the point-goal reward has no collision term unless this is set
    collision_penalty: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, bool) and v < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if self.success_dist > self.d_tilde:
            raise ValueError("success_dist must not exceed d_tilde")


POINT_NAV = NavRewardConfig()
REGION_NAV = NavRewardConfig(success_dist=0.1, success_ang=0.25, collision_penalty=True)


@dataclass(frozen=True)
class SkillRewardConfig:
    approach_weight: float
    return_weight: float
    success_ee_radius: float
    collision_budget: Optional[float]
    event_bonus: float = 1.0
    failure_penalty: float = 1.0
    success_bonus: float = 2.5
    slack: float = 0.0
    base_penalty: float = 0.0
    col_scale: float = 0.0
    col_cap: float = 0.2
    slip_object: float = 0.09
    slip_handle: float = 0.2
    place_radius: float = 0.15
    joint_goal: float = 0.0
    state_threshold: float = 0.0
    progress_weight: float = 2.0
    too_fast: Optional[float] = None
    literal_max: bool = False
    literal_fridge_open: bool = False

    def __post_init__(self):
        for name in ("success_ee_radius", "slip_object", "slip_handle", "place_radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


def skill_reward_config(skill: str, **overrides) -> SkillRewardConfig:
    """Default constants for ``pick``, ``place``, ``open_drawer``, ``close_drawer``,
    ``open_fridge`` or ``close_fridge``."""
    if skill == "pick":
        cfg = SkillRewardConfig(4.0, 4.0, 0.05, 5000.0, slack=0.002, col_scale=0.001)
    elif skill == "place":
        cfg = SkillRewardConfig(4.0, 4.0, 0.05, 7500.0, slack=0.002, col_scale=0.001)
    elif skill == "open_drawer":
        cfg = SkillRewardConfig(2.0, 2.0, 0.15, None, base_penalty=0.004, joint_goal=0.45,
                                state_threshold=0.05, too_fast=0.1)
    elif skill == "close_drawer":
        cfg = SkillRewardConfig(2.0, 2.0, 0.15, None, base_penalty=0.004, joint_goal=0.0,
                                state_threshold=0.1)
    elif skill == "open_fridge":
        cfg = SkillRewardConfig(2.0, 1.0, 0.15, 5000.0, base_penalty=0.004, joint_goal=math.pi / 2,
                                state_threshold=0.15)
    elif skill == "close_fridge":
        cfg = SkillRewardConfig(2.0, 1.0, 0.15, 5000.0, base_penalty=0.004, joint_goal=0.0,
                                state_threshold=0.15)
    else:
        raise ValueError(f"unknown skill {skill!r}")
    return replace(cfg, **overrides)


@dataclass(frozen=True)
class StepContext:
    """Measurements at t-1 and t plus what happened during the step.

    ``holding`` means the correct object (or handle) is held at t.
    ``grasped``/``released`` are set on the step where the correct
    object or handle changes hands; ``wrong_grasp`` when anything else is
    grasped.
    """

    prev: Measurements
    cur: Measurements
    holding: bool = False
    grasped: bool = False
    released: bool = False
    wrong_grasp: bool = False
    collision_step: float = 0.0
    collision_accum: float = 0.0
    base_action: tuple = (0.0, 0.0)
    stop: bool = False
    out_of_region: bool = False
    first_step: bool = False


@dataclass(frozen=True)
class RewardOutput:
    reward: float
    done: bool
    success: bool
    failure: Optional[str] = None
    terms: dict = field(default_factory=dict)


def _finish(terms: dict, success: bool, failure: Optional[str], done: bool = False) -> RewardOutput:
    if success:
        failure = None
    return RewardOutput(float(sum(terms.values())), bool(done or success or failure is not None), success, failure, terms)


def _col(c_t: float, scale: float, cap: float, literal_max: bool = False) -> float:
    return max(scale * c_t, cap) if literal_max else min(scale * c_t, cap)


def _delta_geo(prev: float, cur: float) -> Optional[float]:
    """prev - cur, or None when either end is unreachable."""
    if not (math.isfinite(prev) and math.isfinite(cur)):
        return None
    return prev - cur


# -- navigation -------------------------------------------------------------


def point_goal_reward(ctx: StepContext, cfg: NavRewardConfig = POINT_NAV) -> RewardOutput:
    """Geodesic progress toward one goal, angular shaping near it, success on stop."""
    p, c = ctx.prev, ctx.cur
    geo = _delta_geo(p.d_geo, c.d_geo)
    terms = {"geo": 0.0 if geo is None else geo}
    d_ang = abs(c.d_ang)
    ang = 0.0
    if not ctx.first_step and c.d_geo <= cfg.d_tilde:
        ang = -cfg.lambda_ang * (d_ang - abs(p.d_ang))
    terms["ang"] = ang
    success = bool(ctx.stop and c.d_geo <= cfg.success_dist and d_ang <= cfg.success_ang)
    terms["succ"] = cfg.lambda_succ if success else 0.0
    if cfg.collision_penalty:
        terms["col"] = -_col(ctx.collision_step, cfg.col_scale, cfg.col_cap)
    terms["slack"] = -cfg.r_slack
    failure = INFEASIBLE if geo is None and not math.isfinite(c.d_geo) else None
    return _finish(terms, success, failure, done=ctx.stop)


def region_goal_reward(ctx: StepContext, cfg: NavRewardConfig = REGION_NAV) -> RewardOutput:
    """Progress toward the nearest cell of a goal region; no angular shaping.

    ``cur.d_geo`` must already be the minimum over the region and ``cur.d_ang``
    the heading error toward the target from the current position.
    """
    p, c = ctx.prev, ctx.cur
    geo = _delta_geo(p.d_geo, c.d_geo)
    terms = {"geo": 0.0 if geo is None else geo}
    success = bool(ctx.stop and c.d_geo <= cfg.success_dist and abs(c.d_ang) <= cfg.success_ang)
    terms["succ"] = cfg.lambda_succ if success else 0.0
    terms["col"] = -_col(ctx.collision_step, cfg.col_scale, cfg.col_cap)
    terms["slack"] = -cfg.r_slack
    failure = INFEASIBLE if geo is None and not math.isfinite(c.d_geo) else None
    return _finish(terms, success, failure, done=ctx.stop)


# -- manipulation -----------------------------------------------------------


def pick_reward(ctx: StepContext, cfg: SkillRewardConfig) -> RewardOutput:
    p, c = ctx.prev, ctx.cur
    terms = {}
    terms["approach"] = cfg.approach_weight * (p.d_ee_o - c.d_ee_o) if not ctx.holding else 0.0
    terms["pick"] = cfg.event_bonus if ctx.grasped else 0.0
    terms["return"] = cfg.return_weight * (p.d_ee_r - c.d_ee_r) if ctx.holding else 0.0
    success = bool(ctx.holding and c.d_ee_r <= cfg.success_ee_radius)
    terms["succ"] = cfg.success_bonus if success else 0.0
    terms["col"] = -_col(ctx.collision_step, cfg.col_scale, cfg.col_cap, cfg.literal_max)
    failure = None
    over = cfg.collision_budget is not None and ctx.collision_accum > cfg.collision_budget
    slip = ctx.holding and c.d_ee_o > cfg.slip_object
    terms["budget"] = -cfg.failure_penalty if over else 0.0
    terms["wrong"] = -cfg.failure_penalty if ctx.wrong_grasp else 0.0
    terms["slip"] = -cfg.failure_penalty if slip else 0.0
    terms["slack"] = -cfg.slack
    if over:
        failure = COLLISION_BUDGET
    elif ctx.wrong_grasp:
        failure = WRONG_GRASP
    elif slip:
        failure = SLIP
    if failure is not None:
        success = False
        terms["succ"] = 0.0
    return _finish(terms, success, failure)


def place_reward(ctx: StepContext, cfg: SkillRewardConfig) -> RewardOutput:
    p, c = ctx.prev, ctx.cur
    terms = {}
    terms["approach"] = cfg.approach_weight * (p.d_o_goal - c.d_o_goal) if ctx.holding else 0.0
    placed = ctx.released and c.d_o_goal <= cfg.place_radius
    dropped = ctx.released and not placed
    terms["place"] = cfg.event_bonus if placed else 0.0
    terms["return"] = cfg.return_weight * (p.d_ee_r - c.d_ee_r) if not ctx.holding else 0.0
    success = bool(c.d_o_goal <= cfg.place_radius and not ctx.holding and c.d_ee_r <= cfg.success_ee_radius)
    over = cfg.collision_budget is not None and ctx.collision_accum > cfg.collision_budget
    slip = ctx.holding and c.d_ee_o > cfg.slip_object
    terms["succ"] = cfg.success_bonus if success else 0.0
    terms["col"] = -_col(ctx.collision_step, cfg.col_scale, cfg.col_cap, cfg.literal_max)
    terms["budget"] = -cfg.failure_penalty if over else 0.0
    terms["drop"] = -cfg.failure_penalty if dropped else 0.0
    terms["slip"] = -cfg.failure_penalty if slip else 0.0
    terms["slack"] = -cfg.slack
    failure = None
    if over:
        failure = COLLISION_BUDGET
    elif dropped:
        failure = DROP
    elif slip:
        failure = SLIP
    if failure is not None:
        success = False
        terms["succ"] = 0.0
    return _finish(terms, success, failure)


def joint_state_reached(m: Measurements, cfg: SkillRewardConfig, opening: bool, fridge: bool) -> bool:
    """Open/closed indicator for the container joint in ``m``."""
    if fridge and opening:
        # "g - q > threshold" marks a fridge that is not yet open
        not_open = (cfg.joint_goal - m.joint) > cfg.state_threshold
        return not_open if cfg.literal_fridge_open else not not_open
    return m.d_a_g <= cfg.state_threshold


def articulated_reward(ctx: StepContext, cfg: SkillRewardConfig, kind: str) -> RewardOutput:
    """``kind`` is one of open_drawer, close_drawer, open_fridge, close_fridge."""
    opening = kind.startswith("open")
    fridge = kind.endswith("fridge")
    p, c = ctx.prev, ctx.cur
    was = joint_state_reached(p, cfg, opening, fridge)
    now = joint_state_reached(c, cfg, opening, fridge)
    delta_joint = p.d_a_g - c.d_a_g
    terms = {}
    terms["approach"] = cfg.approach_weight * (p.d_ee_h - c.d_ee_h) if not now else 0.0
    terms["grasp"] = cfg.event_bonus if ctx.grasped else 0.0
    terms["progress"] = cfg.progress_weight * delta_joint if ctx.holding else 0.0
    terms["release"] = cfg.event_bonus if (ctx.released and now) else 0.0
    terms["return"] = cfg.return_weight * (p.d_ee_r - c.d_ee_r) if now else 0.0
    success = bool(now and not ctx.holding and c.d_ee_r <= cfg.success_ee_radius)
    terms["succ"] = cfg.success_bonus if success else 0.0
    over = cfg.collision_budget is not None and ctx.collision_accum > cfg.collision_budget
    slip = ctx.holding and c.d_ee_h > cfg.slip_handle
    terms["budget"] = -cfg.failure_penalty if over else 0.0
    terms["wrong"] = -cfg.failure_penalty if ctx.wrong_grasp else 0.0
    terms["slip"] = -cfg.failure_penalty if slip else 0.0
    terms["out"] = -cfg.failure_penalty if ctx.out_of_region else 0.0
    terms["base"] = -cfg.base_penalty * float(np.abs(np.asarray(ctx.base_action, dtype=float)).sum())
    failure = None
    if over:
        failure = COLLISION_BUDGET
    elif ctx.wrong_grasp:
        failure = WRONG_GRASP
    elif slip:
        failure = SLIP
    elif ctx.out_of_region:
        failure = OUT_OF_REGION
    elif was and not now:
        failure = REGRESSION
    elif ctx.released and not now:
        failure = PREMATURE_RELEASE
    elif cfg.too_fast is not None and delta_joint >= cfg.too_fast:
        failure = TOO_FAST
    if failure is not None:
        success = False
        terms["succ"] = 0.0
    return _finish(terms, success, failure)


def skill_reward(skill: str, ctx: StepContext, cfg: SkillRewardConfig) -> RewardOutput:
    if skill == "pick":
        return pick_reward(ctx, cfg)
    if skill == "place":
        return place_reward(ctx, cfg)
    return articulated_reward(ctx, cfg, skill)


def default_config_dict() -> dict:
    """All reward constants, keyed by skill, for ``config --print-defaults``."""
    out = {"navigate_point": asdict(POINT_NAV), "navigate_region": asdict(REGION_NAV)}
    for s in ("pick", "place", "open_drawer", "close_drawer", "open_fridge", "close_fridge"):
        out[s] = asdict(skill_reward_config(s))
    return out
