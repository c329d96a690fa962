"""Training environments.

:class:`NavBatchEnv` steps many navigation episodes at once with numpy and
mirrors :func:`mobilemanip.world.move_base` and the navigation rewards
exactly; it is what makes desk-scale RL feasible. :class:`SkillEnv` wraps
any skill around the scalar world model and :class:`VecSkillEnv` batches a
list of them behind the same interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .episodes import EpisodeSpec, make_scene, scene_context
from .geometry import Pose2D, angle_diff, bearing, world_to_base
from .navgrid import geodesic_field
from .rewards import POINT_NAV, REGION_NAV, NavRewardConfig
from .sampler import (
    InitNoise,
    SampleBudgetError,
    sample_initial_state,
    site_candidates,
    site_stationary_start,
)
from .skills import (
    NAV_ANGULAR,
    NAV_BUDGET,
    NAV_LINEAR,
    N_NAV_ACTIONS,
    OPEN_DRAWER_TARGET,
    OPEN_FRIDGE_TARGET,
    STOP_INDEX,
    SkillBinding,
    SkillSpec,
)
from .world import DEFAULT_WORLD, REST_EE, Action, WorldConfig, apply_action

PATCH_SIZE = 11
PATCH_CELL = 0.2

_LIN = np.array(NAV_LINEAR)
_ANG = np.array(NAV_ANGULAR)


def _wrap(theta: np.ndarray) -> np.ndarray:
    t = np.fmod(theta, 2.0 * np.pi)
    t = np.where(t <= -np.pi, t + 2.0 * np.pi, t)
    return np.where(t > np.pi, t - 2.0 * np.pi, t)


def _patch_offsets(size: int = PATCH_SIZE, cell: float = PATCH_CELL) -> tuple[np.ndarray, np.ndarray]:
    k = (np.arange(size) - size // 2) * cell
    u, v = np.meshgrid(k, k, indexing="ij")  # u ahead, v to the left
    return u.ravel(), v.ravel()


@dataclass
class _NavEpisode:
    episode: EpisodeSpec
    grid_id: int
    target: np.ndarray
    region: np.ndarray  # flat cell indices
    field: np.ndarray  # (H, W) meters to the region
    starts: np.ndarray  # flat indices of main-component cells


class NavBatchEnv:
    """Vectorized navigation to the start region of a mobile Pick.

    ``mode="region"`` rewards progress toward the whole candidate region;
    ``mode="point"`` fixes one candidate cell per episode as the goal, which
    the observation does not reveal. Observations: target in the base frame,
    planar distance and heading error to it, previous base action and an
    occupancy patch around the robot.
    """

    def __init__(
        self,
        episodes: Sequence[EpisodeSpec],
        n_envs: int,
        mode: str = "region",
        seed: int = 0,
        nav_cfg: Optional[NavRewardConfig] = None,
        budget: int = NAV_BUDGET,
        radius: float = 2.0,
        world: WorldConfig = DEFAULT_WORLD,
        fixed_assignment: bool = False,
    ):
        if mode not in ("region", "point"):
            raise ValueError(f"unknown navigation mode {mode!r}")
        self.mode = mode
        self.cfg = nav_cfg or (REGION_NAV if mode == "region" else POINT_NAV)
        self.n_envs = n_envs
        self.budget = budget
        self.world = world
        self.fixed_assignment = fixed_assignment
        self.rng = np.random.default_rng(seed)
        self._build(episodes, radius)
        self._pu, self._pv = _patch_offsets()
        self.obs_dim = 3 + 3 + 2 + PATCH_SIZE * PATCH_SIZE
        self.action_spec = {"type": "discrete", "n": N_NAV_ACTIONS}
        n = n_envs
        self.x = np.zeros(n)
        self.y = np.zeros(n)
        self.theta = np.zeros(n)
        self.ep = np.zeros(n, dtype=np.int64)
        self.steps = np.zeros(n, dtype=np.int64)
        self.prev_lin = np.zeros(n)
        self.prev_ang = np.zeros(n)
        self.prev_d = np.zeros(n)
        self.prev_ang_err = np.zeros(n)
        self.facing = np.zeros(n)
        self.goal_field = np.zeros((n, self.H, self.W))
        self._point_cache: dict = {}
        self._next_fixed = 0

    # -- setup ----------------------------------------------------------------

    def _build(self, episodes, radius):
        grids, keys = [], {}
        self.episodes: list[_NavEpisode] = []
        for e in episodes:
            layout = e.layout.resolve()
            ctx = scene_context(layout)
            if layout.key not in keys:
                keys[layout.key] = len(grids)
                grids.append(ctx)
            target = np.asarray(e.targets[0].start.position, dtype=float)
            spec = SkillSpec("pick", tuple(target), "mobile", object_index=0)
            cands = site_candidates(ctx.grid, spec.site(None), True, radius)
            f = ctx.field(("region", spec.site(None), "mobile", radius), cands.cells)
            self.episodes.append(
                _NavEpisode(e, keys[layout.key], target, np.asarray(cands.cells.cells), f.meters, ctx.main_indices)
            )
        self.contexts = grids
        self.H = max(c.grid.height for c in grids)
        self.W = max(c.grid.width for c in grids)
        self.nav = np.zeros((len(grids), self.H, self.W), bool)
        self.origin = np.zeros((len(grids), 2))
        res = {c.grid.resolution for c in grids}
        if len(res) != 1:
            raise ValueError("all grids must share one resolution")
        self.res = res.pop()
        for i, c in enumerate(grids):
            g = c.grid
            self.nav[i, : g.height, : g.width] = g.navigable
            self.origin[i] = g.origin
        self.fields = np.full((len(self.episodes), self.H, self.W), np.inf)
        for i, ne in enumerate(self.episodes):
            h, w = ne.field.shape
            self.fields[i, :h, :w] = ne.field
        self.gid = np.array([ne.grid_id for ne in self.episodes])
        self.targets = np.array([ne.target for ne in self.episodes])
        # point mode: one goal cell per episode, drawn from the episode's own seed so
        # training and evaluation envs agree on it
        self.point_goals = np.array([
            int(np.random.default_rng([ne.episode.seed, ne.episode.episode_id, 17]).choice(ne.region))
            for ne in self.episodes
        ])

    # -- grid lookups -----------------------------------------------------------

    def _cells(self, gid, x, y):
        ix = np.floor((x - self.origin[gid, 0]) / self.res).astype(np.int64)
        iy = np.floor((y - self.origin[gid, 1]) / self.res).astype(np.int64)
        return ix, iy

    def _navigable(self, gid, x, y) -> np.ndarray:
        ix, iy = self._cells(gid, x, y)
        ok = (ix >= 0) & (ix < self.W) & (iy >= 0) & (iy < self.H)
        out = np.zeros(ix.shape, bool)
        out[ok] = self.nav[gid[ok], iy[ok], ix[ok]]
        return out

    def _dist(self, idx: np.ndarray) -> np.ndarray:
        gid = self.gid[self.ep[idx]]
        ix, iy = self._cells(gid, self.x[idx], self.y[idx])
        return self.goal_field[idx, iy, ix]

    def _ang_err(self, idx: np.ndarray) -> np.ndarray:
        if self.mode == "region":
            t = self.targets[self.ep[idx]]
            theta_star = np.arctan2(t[:, 1] - self.y[idx], t[:, 0] - self.x[idx])
        else:
            theta_star = self.facing[idx]
        return np.abs(_wrap(self.theta[idx] - theta_star))

    # -- episode management -------------------------------------------------------

    def _point_field(self, e: int, cell: int) -> np.ndarray:
        key = (int(self.gid[e]), cell)  # episodes in one room share fields
        f = self._point_cache.get(key)
        if f is None:
            ctx = self.contexts[self.gid[e]]
            f = np.full((self.H, self.W), np.inf)
            m = geodesic_field(ctx.grid, [cell]).meters
            f[: m.shape[0], : m.shape[1]] = m
            self._point_cache[key] = f
        return f

    def set_state(self, i: int, episode: int, pose: Pose2D, goal_cell: Optional[int] = None) -> None:
        """Place env ``i`` at ``pose`` in ``episode`` (used by resets and tests)."""
        ne = self.episodes[episode]
        self.ep[i] = episode
        self.x[i], self.y[i], self.theta[i] = pose.x, pose.y, pose.theta
        self.steps[i] = 0
        self.prev_lin[i] = self.prev_ang[i] = 0.0
        if self.mode == "region":
            self.goal_field[i] = self.fields[episode]
        else:
            if goal_cell is None:
                goal_cell = int(self.point_goals[episode])
            ctx = self.contexts[ne.grid_id]
            gx, gy = ctx.grid.index_center(goal_cell)
            self.goal_field[i] = self._point_field(episode, goal_cell)
            self.facing[i] = bearing((gx, gy), ne.target)
        idx = np.array([i])
        self.prev_d[i] = self._dist(idx)[0]
        self.prev_ang_err[i] = self._ang_err(idx)[0]

    def random_start(self, episode: int, rng: np.random.Generator) -> Pose2D:
        ne = self.episodes[episode]
        grid = self.contexts[ne.grid_id].grid
        cell = int(rng.choice(ne.starts))
        x, y = grid.index_center(cell)
        return Pose2D(x, y, float(rng.uniform(-math.pi, math.pi)))

    def _reset_one(self, i: int) -> None:
        if self.fixed_assignment:
            e = self._next_fixed % len(self.episodes)
            self._next_fixed += 1
        else:
            e = int(self.rng.integers(len(self.episodes)))
        self.set_state(i, e, self.random_start(e, self.rng))

    def reset(self) -> np.ndarray:
        self._next_fixed = 0
        for i in range(self.n_envs):
            self._reset_one(i)
        return self.observe()

    # -- observation -------------------------------------------------------------

    def observe(self, idx: Optional[np.ndarray] = None) -> np.ndarray:
        if idx is None:
            idx = np.arange(self.n_envs)
        x, y, th = self.x[idx], self.y[idx], self.theta[idx]
        t = self.targets[self.ep[idx]]
        c, s = np.cos(th), np.sin(th)
        dx, dy = t[:, 0] - x, t[:, 1] - y
        fwd, right = c * dx + s * dy, s * dx - c * dy
        dist = np.hypot(dx, dy)
        err = _wrap(np.arctan2(dy, dx) - th)
        gid = self.gid[self.ep[idx]]
        px = x[:, None] + c[:, None] * self._pu - s[:, None] * self._pv
        py = y[:, None] + s[:, None] * self._pu + c[:, None] * self._pv
        occ = ~self._navigable(np.repeat(gid, px.shape[1]).reshape(px.shape), px, py)
        return np.concatenate(
            [
                np.stack([fwd, t[:, 2], right, dist, np.cos(err), np.sin(err),
                          self.prev_lin[idx], self.prev_ang[idx]], axis=1),
                occ.astype(float),
            ],
            axis=1,
        ).astype(np.float32)

    # -- dynamics and reward ---------------------------------------------------------

    def _move(self, lin: np.ndarray, ang: np.ndarray) -> np.ndarray:
        """Vectorized copy of :func:`move_base`; returns penetration in m."""
        scale, dt = self.world.nav_base_scale, self.world.dt
        gid = self.gid[self.ep]
        x, y, th = self.x, self.y, self.theta
        dist = lin * scale * dt
        new_th = _wrap(th + ang * scale * dt)
        dx = dist * np.cos(th)
        dy = dist * np.sin(th)

        def free(bx, by):
            ex, ey = x + bx, y + by
            return self._navigable(gid, ex, ey) & self._navigable(gid, x + (ex - x) / 2, y + (ey - y) / 2)

        moving = dist != 0.0
        full = free(dx, dy) & moving
        fx = free(dx, np.zeros_like(dy)) & (np.abs(dx) > 0)
        fy = free(np.zeros_like(dx), dy) & (np.abs(dy) > np.where(fx, np.abs(dx), 0.0))
        bx = np.where(full, dx, np.where(fy, 0.0, np.where(fx, dx, 0.0)))
        by = np.where(full, dy, np.where(fy, dy, 0.0))
        pen = np.where(moving & ~full, np.hypot(dx - bx, dy - by), 0.0)
        self.x = np.where(moving, x + bx, x)
        self.y = np.where(moving, y + by, y)
        self.theta = new_th
        return pen

    def step(self, actions: np.ndarray):
        actions = np.asarray(actions, dtype=np.int64)
        lin = _LIN[actions // len(NAV_ANGULAR)]
        ang = _ANG[actions % len(NAV_ANGULAR)]
        stop = actions == STOP_INDEX
        pen = self._move(lin, ang)
        self.steps += 1
        all_idx = np.arange(self.n_envs)
        d = self._dist(all_idx)
        a = self._ang_err(all_idx)
        cfg = self.cfg
        ok = np.isfinite(self.prev_d) & np.isfinite(d)
        geo = np.where(ok, self.prev_d - np.where(ok, d, 0.0), 0.0)
        reward = geo.copy()
        dist_ok = cfg.success_dist
        success = stop & (d <= dist_ok) & (a <= cfg.success_ang)
        if self.mode == "point":
            first = self.steps == 1
            reward = reward + np.where(~first & (d <= cfg.d_tilde), -cfg.lambda_ang * (a - self.prev_ang_err), 0.0)
        reward = reward + np.where(success, cfg.lambda_succ, 0.0)
        if self.mode == "region" or cfg.collision_penalty:
            reward = reward - np.minimum(cfg.col_scale * (pen * self.world.force_per_meter), cfg.col_cap)
        reward = reward - cfg.r_slack
        self.prev_d, self.prev_ang_err = d, a
        self.prev_lin, self.prev_ang = lin, ang
        terminated = stop.copy()
        truncated = ~terminated & (self.steps >= self.budget)
        done = terminated | truncated
        info = {"success": success, "done": done, "final_obs": None, "length": self.steps.copy()}
        if done.any():
            info["final_obs"] = self.observe()
            for i in np.flatnonzero(done):
                self._reset_one(int(i))
        return self.observe(), reward, terminated, truncated, info


def nav_observation(state, target, prev_base=(0.0, 0.0)) -> np.ndarray:
    """Single-robot version of :meth:`NavBatchEnv.observe` for chained execution."""
    pose = state.robot.base
    grid = state.grid
    t = np.asarray(target, dtype=float)
    c, s = np.cos(pose.theta), np.sin(pose.theta)
    dx, dy = t[0] - pose.x, t[1] - pose.y
    err = _wrap(np.arctan2(dy, dx) - pose.theta)
    pu, pv = _patch_offsets()
    px = pose.x + c * pu - s * pv
    py = pose.y + s * pu + c * pv
    ix = np.floor((px - grid.origin[0]) / grid.resolution).astype(np.int64)
    iy = np.floor((py - grid.origin[1]) / grid.resolution).astype(np.int64)
    ok = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    free = np.zeros(ix.shape, bool)
    free[ok] = grid.navigable[iy[ok], ix[ok]]
    head = [c * dx + s * dy, t[2], s * dx - c * dy, np.hypot(dx, dy), np.cos(err), np.sin(err),
            prev_base[0], prev_base[1]]
    return np.concatenate([head, (~free).astype(float)]).astype(np.float32)


# -- generic scalar skill environment ------------------------------------------------------


CONTINUOUS_DIM = 6  # base (2), arm (3), grip (1)


def skill_observation(binding: SkillBinding, state, prev_action: np.ndarray) -> np.ndarray:
    """Goal in base and end-effector frames, end-effector, holding flag, last action."""
    robot = state.robot
    spec = binding.spec
    goal = np.asarray(spec.target, dtype=float)
    if spec.name == "pick" and spec.object_id is not None:
        goal = state.object(spec.object_id).position
    elif spec.container is not None and spec.name != "navigate":
        goal = state.container(spec.container).handle()
    g_base = world_to_base(robot.base, goal)
    return np.concatenate(
        [g_base, g_base - robot.ee, robot.ee, [float(robot.holding is not None)], prev_action]
    ).astype(np.float32)


class SkillEnv:
    """One skill as an episodic MDP over the scalar world model.

    Each reset draws an episode, builds the subtask's initial state
    (candidate cells plus noise for the chosen variant) and binds the
    skill's reward.
    """

    def __init__(
        self,
        skill: str,
        episodes: Sequence[EpisodeSpec],
        variant: str = "mobile",
        seed: int = 0,
        noise: Optional[InitNoise] = None,
        init_variant: Optional[str] = None,
        radius: float = 2.0,
        budget: Optional[int] = None,
        world: WorldConfig = DEFAULT_WORLD,
    ):
        if skill == "navigate":
            raise ValueError("use NavBatchEnv for navigation")
        self.skill = skill
        self.episodes = list(episodes)
        self.variant = variant
        self.init_variant = init_variant or variant
        self.noise = noise or InitNoise()
        self.radius = radius
        self.world = world
        self.rng = np.random.default_rng(seed)
        self.obs_dim = 3 + 3 + 3 + 1 + CONTINUOUS_DIM
        self.action_spec = {"type": "continuous", "dim": CONTINUOUS_DIM}
        self.budget_override = budget

    def _pick_subtask(self, ep: EpisodeSpec):
        """(spec, joints, holding) for a random target of ``ep`` suited to the skill."""
        layout = ep.layout.resolve()
        frames = {c.id: c.front_frame for c in layout.containers}
        options = []
        for i, t in enumerate(ep.targets):
            if self.skill == "pick":
                options.append((SkillSpec("pick", t.start.position, self.variant, object_index=i), t.start.container))
            elif self.skill == "place":
                options.append((SkillSpec("place", t.goal.position, self.variant, object_index=i), t.goal.container))
            else:
                for pl in (t.start, t.goal):
                    kind = "fridge" if pl.container == "fridge" else "drawer"
                    if pl.container is not None and self.skill.endswith(kind):
                        from .sampler import _container_probe

                        options.append((SkillSpec(self.skill, _container_probe(frames[pl.container]), self.variant,
                                                  container=pl.container), pl.container))
        if not options:
            raise ValueError(f"episode {ep.episode_id} has no {self.skill} subtask")
        return options[int(self.rng.integers(len(options)))]

    def reset(self):
        for _ in range(100):
            ep = self.episodes[int(self.rng.integers(len(self.episodes)))]
            try:
                spec, container = self._pick_subtask(ep)
            except ValueError:
                continue
            ctx = scene_context(ep.layout.resolve())
            frames = {c.id: c.front_frame for c in ctx.layout.containers}
            site = spec.site(frames.get(spec.container))
            joints = {}
            if container is not None:
                kind = "fridge" if container == "fridge" else "drawer"
                opened = OPEN_FRIDGE_TARGET if kind == "fridge" else OPEN_DRAWER_TARGET
                joints[container] = 0.0 if self.skill.startswith("open") else opened
            mobile = self.init_variant == "mobile" or spec.effective_variant == "mobile"
            try:
                if mobile:
                    cands = site_candidates(ctx.grid, site, True, self.radius)
                else:
                    cands = site_candidates(ctx.grid, site, False)
                init = sample_initial_state(cands, self.noise, self.rng, spec.target)
            except SampleBudgetError:
                continue
            state = make_scene(ep, init.base, joints)
            state = replace(state, robot=replace(state.robot, ee=init.ee))
            if self.skill == "place":
                oid = spec.object_id
                ee_w = state.robot.ee_world()
                state = replace(
                    state,
                    robot=replace(state.robot, holding=oid),
                    objects=tuple(replace(o, held=True, container=None, local=None, position=ee_w)
                                  if o.id == oid else o for o in state.objects),
                )
            self.binding = SkillBinding(spec, ctx, world=self.world)
            self.state = state
            self.prev_m = self.binding.measure(state)
            self.steps = 0
            self.prev_action = np.zeros(CONTINUOUS_DIM)
            return skill_observation(self.binding, state, self.prev_action)
        raise RuntimeError(f"could not build a {self.skill} subtask in 100 tries")

    def step(self, action: np.ndarray):
        a = Action.from_vector(np.clip(np.asarray(action, dtype=float), -1.0, 1.0))
        a = self.binding.mask(a, self.state, False)
        nxt = apply_action(self.state, a, base_scale=self.binding.base_scale(), cfg=self.world)
        self.steps += 1
        m = self.binding.measure(nxt)
        ctx = self.binding.step_context(self.state, nxt, self.prev_m, m, a, first_step=self.steps == 1)
        out = self.binding.reward(ctx)
        self.state, self.prev_m = nxt, m
        self.prev_action = a.vector()
        budget = self.budget_override or self.binding.spec.budget
        terminated = out.done
        truncated = not terminated and self.steps >= budget
        obs = skill_observation(self.binding, nxt, self.prev_action)
        return obs, out.reward, terminated, truncated, {"success": out.success, "failure": out.failure}


class VecSkillEnv:
    """Batch of :class:`SkillEnv` with auto-reset, same interface as NavBatchEnv."""

    def __init__(self, envs: Sequence[SkillEnv]):
        self.envs = list(envs)
        self.n_envs = len(self.envs)
        self.obs_dim = self.envs[0].obs_dim
        self.action_spec = self.envs[0].action_spec
        self.steps = np.zeros(self.n_envs, dtype=np.int64)

    def reset(self) -> np.ndarray:
        self.steps[:] = 0
        return np.stack([e.reset() for e in self.envs])

    def step(self, actions: np.ndarray):
        obs, rew, term, trunc, succ = [], [], [], [], []
        final = None
        lengths = np.zeros(self.n_envs, dtype=np.int64)
        for i, (e, a) in enumerate(zip(self.envs, actions)):
            o, r, te, tr, info = e.step(a)
            self.steps[i] += 1
            lengths[i] = self.steps[i]
            if te or tr:
                if final is None:
                    final = np.zeros((self.n_envs, self.obs_dim), np.float32)
                final[i] = o
                o = e.reset()
                self.steps[i] = 0
            obs.append(o)
            rew.append(r)
            term.append(te)
            trunc.append(tr)
            succ.append(info["success"])
        term, trunc = np.array(term), np.array(trunc)
        info = {"success": np.array(succ), "done": term | trunc, "final_obs": final, "length": lengths}
        return np.stack(obs), np.array(rew), term, trunc, info
