from __future__ import annotations

import math

import numpy as np
import pytest

from mobilemanip.episodes import generate_episodes, generate_layouts, make_scene, scene_context
from mobilemanip.geometry import Pose2D
from mobilemanip.sampler import site_stationary_start
from mobilemanip.skills import (
    MANIP_BUDGET,
    N_NAV_ACTIONS,
    NAV_BUDGET,
    STOP_INDEX,
    DiscreteNavAction,
    Proprio,
    SkillBinding,
    SkillConfigError,
    SkillSpec,
    check_termination,
    oracle_controller,
    run_skill,
    translate_action,
)
from mobilemanip.world import REST_EE, Action


@pytest.fixture(scope="module")
def tidy():
    return generate_episodes("tidyhouse", generate_layouts(0), "cross_config", 6, seed=0)


@pytest.fixture(scope="module")
def settable():
    return generate_episodes("settable", generate_layouts(0), "cross_config", 4, seed=0)


def test_discrete_action_table():
    table = [translate_action(DiscreteNavAction.from_index(i)) for i in range(N_NAV_ACTIONS)]
    assert len(table) == 20
    assert [i for i, (_, stop) in enumerate(table) if stop] == [STOP_INDEX]
    assert table[0][0].base == (-0.5, -1.0)
    assert table[19][0].base == (1.0, 1.0)
    assert table[STOP_INDEX][0].base == (0.0, 0.0)
    for a, _ in table:
        assert a.arm == (0.0, 0.0, 0.0) and a.grip == 0.0
    for i in range(N_NAV_ACTIONS):
        assert DiscreteNavAction.from_index(i).index == i
    with pytest.raises(IndexError):
        DiscreteNavAction.from_index(20)


def test_spec_validation_and_labels():
    with pytest.raises(SkillConfigError):
        SkillSpec("fly", (0, 0, 0))
    with pytest.raises(SkillConfigError):
        SkillSpec("pick", (0, 0, 0), "hover")
    fr = SkillSpec("open_fridge", (0, 0, 0), "stationary", container="fridge")
    assert fr.effective_variant == "mobile" and not fr.base_masked
    dr = SkillSpec("open_drawer", (0, 0, 0), "stationary", container="drawer_0")
    assert dr.base_masked and dr.label == "Open_dr"
    assert SkillSpec("navigate", (0, 0, 0), next=fr).label == "Navigate_fr"
    assert dr.budget == MANIP_BUDGET and SkillSpec("navigate", (0, 0, 0), next=fr).budget == NAV_BUDGET


def _p(ee_offset=0.0, holding=False, excursion=0.0, stop=False):
    return Proprio(REST_EE + np.array([ee_offset, 0, 0]), holding, excursion, stop)


@pytest.mark.parametrize(
    "kind, proprio, step, expected",
    [
        ("pick", _p(0.1, holding=True), 5, (True, True)),
        ("pick", _p(0.2, holding=True), 5, (False, False)),
        ("pick", _p(0.0, holding=False), 5, (False, False)),
        ("pick", _p(0.0, holding=False), MANIP_BUDGET, (True, False)),
        ("place", _p(0.1, holding=False), 5, (True, True)),
        ("place", _p(0.1, holding=True), 5, (False, False)),
        ("open_drawer", _p(0.1, excursion=0.35), 5, (True, True)),
        ("open_drawer", _p(0.1, excursion=0.2), 5, (False, False)),
        ("close_fridge", _p(0.0, excursion=0.3), 5, (True, True)),
        ("navigate", _p(stop=True), 1, (True, True)),
        ("navigate", _p(), NAV_BUDGET - 1, (False, False)),
        ("navigate", _p(), NAV_BUDGET, (True, False)),
    ],
)
def test_termination_rules(kind, proprio, step, expected):
    t = check_termination(kind, proprio, step)
    assert (t.terminate, t.declared_success) == expected


def _pick_binding(ep, variant):
    ctx = scene_context(ep.layout.resolve())
    t = ep.targets[0]
    spec = SkillSpec("pick", t.start.position, variant, container=t.start.container, object_index=0)
    return SkillBinding(spec, ctx), ctx


def _backed_off(ctx, spec, offset):
    p = site_stationary_start(ctx.grid, spec.site(None))
    return Pose2D(p.x - offset * math.cos(p.theta), p.y - offset * math.sin(p.theta), p.theta)


def test_stationary_mask_keeps_base_bit_identical(tidy):
    b, ctx = _pick_binding(tidy[0], "stationary")
    state = make_scene(tidy[0], _backed_off(ctx, b.spec, 0.0))
    hook_bases = []
    rng = np.random.default_rng(0)

    class Noisy:
        def reset(self, s):
            pass

        def act(self, s):
            return Action.from_vector(rng.uniform(-1, 1, 6)), False

    run_skill(b, Noisy(), state, step_hook=lambda s: hook_bases.append(s.robot.base))
    assert hook_bases and all(p == state.robot.base for p in hook_bases)


def test_mask_blocks_release_in_pick_and_grasp_in_place(tidy):
    b, _ = _pick_binding(tidy[0], "mobile")
    assert b.mask(Action(grip=-1.0), None, False).grip == 0.0
    t = tidy[0].targets[0]
    place = SkillBinding(SkillSpec("place", t.goal.position, object_index=0), b.ctx)
    assert place.mask(Action(grip=1.0), None, False).grip == 0.0
    nav = SkillBinding(SkillSpec("navigate", t.start.position, next=b.spec), b.ctx)
    assert nav.mask(Action((1, 0), (1, 1, 1), 1), None, False) == Action((1, 0))


@pytest.mark.parametrize("variant", ["mobile", "stationary"])
def test_oracle_pick_from_stationary_start(tidy, variant):
    for ep in tidy:
        b, ctx = _pick_binding(ep, variant)
        run = run_skill(b, oracle_controller(b), make_scene(ep, _backed_off(ctx, b.spec, 0.0)))
        assert run.success, ep.episode_id


def test_out_of_reach_needs_the_base(tidy):
    """Backed away past arm reach: the stationary skill fails, the mobile one recovers."""
    checked = 0
    for ep in tidy:
        for offset in (0.3, 1.0):
            bs, ctx = _pick_binding(ep, "stationary")
            pose = _backed_off(ctx, bs.spec, offset)
            if not ctx.grid.is_navigable_xy(pose.x, pose.y):
                continue
            bm, _ = _pick_binding(ep, "mobile")
            assert run_skill(bm, oracle_controller(bm), make_scene(ep, pose)).success
            target = np.asarray(ep.targets[0].start.position)
            if offset == 1.0 and math.hypot(target[0] - pose.x, target[1] - pose.y) > 1.2:
                assert not run_skill(bs, oracle_controller(bs), make_scene(ep, pose)).success
                checked += 1
    assert checked > 0


def test_oracle_navigation_reaches_region(tidy):
    for mode in ("region", "point"):
        for ep in tidy[:3]:
            b, ctx = _pick_binding(ep, "mobile")
            nav = SkillBinding(SkillSpec("navigate", b.spec.target, nav_mode=mode, next=b.spec), ctx)
            cell = int(ctx.main_indices[len(ctx.main_indices) // 3])
            x, y = ctx.grid.index_center(cell)
            run = run_skill(nav, oracle_controller(nav), make_scene(ep, Pose2D(x, y, 0.0)))
            assert run.success, (mode, ep.episode_id)


@pytest.mark.parametrize("kind", ["open_drawer", "close_drawer", "open_fridge", "close_fridge"])
def test_oracle_articulation(settable, kind):
    from mobilemanip.envs import SkillEnv

    env = SkillEnv(kind, settable, "mobile", seed=1)
    for _ in range(3):
        env.reset()
        run = run_skill(env.binding, oracle_controller(env.binding), env.state)
        assert run.success, kind
