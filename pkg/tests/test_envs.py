from __future__ import annotations

import numpy as np
import pytest

from mobilemanip.envs import CONTINUOUS_DIM, NavBatchEnv, SkillEnv, VecSkillEnv, nav_observation
from mobilemanip.episodes import generate_episodes, generate_layouts, make_scene, scene_context
from mobilemanip.skills import (
    STOP_INDEX,
    DiscreteNavAction,
    SkillBinding,
    SkillSpec,
    translate_action,
)
from mobilemanip.world import apply_action


@pytest.fixture(scope="module")
def rooms():
    return generate_episodes("navroom", None, "train", 10, seed=0)


@pytest.mark.parametrize("mode", ["region", "point"])
def test_batch_nav_matches_scalar_world(rooms, mode):
    """The vectorized env reproduces the scalar world model and reward step by step."""
    env = NavBatchEnv(rooms, 1, mode, seed=0)
    rng = np.random.default_rng(1)
    for e in range(len(rooms)):
        pose = env.random_start(e, rng)
        ne = env.episodes[e]
        goal = int(ne.region[0]) if mode == "point" else None
        env.set_state(0, e, pose, goal)
        ctx = scene_context(rooms[e].layout.resolve())
        nxt = SkillSpec("pick", tuple(ne.target), "mobile", object_index=0)
        b = SkillBinding(SkillSpec("navigate", nxt.target, nav_mode=mode, next=nxt), ctx, point_goal=goal)
        s = make_scene(rooms[e], pose)
        pm = b.measure(s)
        prev_base = (0.0, 0.0)
        for k in range(60):
            np.testing.assert_allclose(env.observe(np.array([0]))[0], nav_observation(s, ne.target, prev_base),
                                       atol=1e-5)
            a = int(rng.integers(0, 20))
            if a == STOP_INDEX or k == 59:
                a = STOP_INDEX if k == 59 else 0
            act, stop = translate_action(DiscreteNavAction.from_index(a))
            s2 = apply_action(s, act, base_scale=3.0)
            m = b.measure(s2)
            out = b.reward(b.step_context(s, s2, pm, m, act, stop=stop, first_step=k == 0))
            _, r, te, _, info = env.step(np.array([a]))
            assert r[0] == pytest.approx(out.reward, abs=1e-9)
            assert bool(info["success"][0]) == out.success and bool(te[0]) == out.done
            if out.done:
                break
            assert env.x[0] == pytest.approx(s2.robot.base.x, abs=1e-9)
            assert env.y[0] == pytest.approx(s2.robot.base.y, abs=1e-9)
            assert env.theta[0] == pytest.approx(s2.robot.base.theta, abs=1e-9)
            s, pm, prev_base = s2, m, act.base


def test_batch_nav_auto_reset_and_truncation(rooms):
    env = NavBatchEnv(rooms, 4, "region", seed=3, budget=5)
    obs = env.reset()
    assert obs.shape == (4, env.obs_dim) and env.obs_dim == 129
    for t in range(5):
        obs, r, te, tr, info = env.step(np.zeros(4, dtype=np.int64))
    assert tr.all() and not te.any()
    assert info["final_obs"].shape == obs.shape
    assert (env.steps == 0).all()


def test_batch_nav_is_seeded(rooms):
    def roll(seed):
        env = NavBatchEnv(rooms, 3, "point", seed=seed)
        out = [env.reset()]
        acts = np.random.default_rng(0).integers(0, 20, (30, 3))
        for a in acts:
            out.append(env.step(a)[0])
        return np.stack(out)

    np.testing.assert_array_equal(roll(5), roll(5))
    assert not np.array_equal(roll(5), roll(6))


def test_point_mode_hides_goal_cell(rooms):
    """Two different goal cells of one episode give the same observation."""
    env = NavBatchEnv(rooms, 1, "point", seed=0)
    ne = env.episodes[0]
    pose = env.random_start(0, np.random.default_rng(0))
    env.set_state(0, 0, pose, int(ne.region[0]))
    a = env.observe(np.array([0]))
    env.set_state(0, 0, pose, int(ne.region[-1]))
    np.testing.assert_array_equal(a, env.observe(np.array([0])))


@pytest.mark.parametrize("skill", ["pick", "place"])
def test_skill_env_shapes_and_masking(skill):
    eps = generate_episodes("tidyhouse", generate_layouts(0), "train", 3, seed=0)
    env = SkillEnv(skill, eps, "stationary", seed=0)
    obs = env.reset()
    assert obs.shape == (env.obs_dim,) and env.action_spec == {"type": "continuous", "dim": CONTINUOUS_DIM}
    base = env.state.robot.base
    for _ in range(5):
        obs, r, te, tr, info = env.step(np.ones(CONTINUOUS_DIM))
        if te or tr:
            break
    assert env.state.robot.base == base
    if skill == "place":
        assert obs[9] == 1.0 or te  # still holding, or the episode ended


def test_vec_skill_env():
    eps = generate_episodes("tidyhouse", generate_layouts(0), "train", 3, seed=0)
    venv = VecSkillEnv([SkillEnv("pick", eps, seed=i) for i in range(3)])
    obs = venv.reset()
    assert obs.shape == (3, venv.obs_dim)
    obs, r, te, tr, info = venv.step(np.zeros((3, CONTINUOUS_DIM)))
    assert r.shape == (3,) and "final_obs" in info
