"""Exit criteria, one test per criterion, each printing a PASS/FAIL line.

These are slow (the RL criterion alone trains ten navigation policies); run
``pytest tests/test_acceptance.py -v`` to see only them.
"""

from __future__ import annotations

import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from mobilemanip.chaineval import STAGES, ChainConfig, OracleBank, handoff_noise, progressive_rates, run_chains
from mobilemanip.cli import main
from mobilemanip.episodes import generate_episodes, generate_layouts, make_scene, scene_context
from mobilemanip.geometry import Pose2D
from mobilemanip.navgrid import GridMap, geodesic_field
from mobilemanip.rewards import (
    COLLISION_BUDGET,
    DROP,
    TOO_FAST,
    StepContext,
    articulated_reward,
    pick_reward,
    place_reward,
    point_goal_reward,
    region_goal_reward,
    skill_reward_config,
)
from mobilemanip.rl import PolicyNet, PPOConfig, compute_gae, ppo_losses, train_skill
from mobilemanip.skills import N_NAV_ACTIONS, STOP_INDEX, DiscreteNavAction, SkillBinding, SkillSpec, translate_action
from mobilemanip.world import Measurements as M
from mobilemanip.world import apply_action
from oracles import random_map, ucs_field

pytestmark = pytest.mark.acceptance

TASKS = ("tidyhouse", "preparegroceries", "settable")


def record(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    lines = getattr(sys.modules.get("conftest"), "ACCEPTANCE_LINES", None)
    if lines is not None:
        lines.append(line)
    assert ok, line


# -- geodesic fields ----------------------------------------------------------------------


def test_geodesic_matches_ucs_oracle():
    rng = np.random.default_rng(2024)
    geodesic_field(GridMap(0.05, np.ones((4, 4), bool)), [0])  # compile outside the timed loop
    mismatches, elapsed = 0, 0.0
    for _ in range(200):
        grid = GridMap(0.05, random_map(rng, 64, 0.2))
        src = [int(rng.choice(grid.navigable_indices))]
        t0 = time.perf_counter()
        f = geodesic_field(grid, src).meters
        elapsed += time.perf_counter() - t0
        mismatches += int(not np.array_equal(f, ucs_field(grid.navigable, src, 0.05)))
    record("geodesic oracle equivalence", mismatches == 0 and elapsed < 10.0,
           f"{200 - mismatches}/200 maps exact, field time {elapsed:.2f} s (< 10 s)")


def test_region_field_is_min_of_single_sources():
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(50):
        grid = GridMap(0.05, random_map(rng, 64, 0.2))
        k = int(rng.integers(1, 26))
        src = rng.choice(grid.navigable_indices, size=min(k, grid.navigable_indices.size), replace=False)
        multi = geodesic_field(grid, src).meters
        single = np.min([geodesic_field(grid, [s]).meters for s in src], axis=0)
        bad += int(not np.array_equal(multi, single))
    record("region-min property", bad == 0, f"{50 - bad}/50 maps exact, |region| <= 25")


# -- rewards -------------------------------------------------------------------------------


def test_reward_telescoping():
    """Summed progress terms along real trajectories equal d(0) - d(T)."""
    rooms = generate_episodes("navroom", None, "train", 20, seed=0)
    rng = np.random.default_rng(11)
    worst = {"point": 0.0, "region": 0.0}
    for k in range(1000):
        mode = "point" if k % 2 else "region"
        ep = rooms[k % len(rooms)]
        ctx = scene_context(ep.layout.resolve())
        nxt = SkillSpec("pick", ep.targets[0].start.position, object_index=0)
        b = SkillBinding(SkillSpec("navigate", nxt.target, nav_mode=mode, next=nxt), ctx)
        x, y = ctx.grid.index_center(int(rng.choice(ctx.main_indices)))
        s = make_scene(ep, Pose2D(x, y, float(rng.uniform(-math.pi, math.pi))))
        m0 = pm = b.measure(s)
        total = 0.0
        for t in range(int(rng.integers(5, 40))):
            a = int(rng.integers(N_NAV_ACTIONS))
            act, _ = translate_action(DiscreteNavAction.from_index(a if a != STOP_INDEX else 0))
            s2 = apply_action(s, act, base_scale=3.0)
            m = b.measure(s2)
            total += b.reward(b.step_context(s, s2, pm, m, act, first_step=t == 0)).terms["geo"]
            s, pm = s2, m
        worst[mode] = max(worst[mode], abs(total - (m0.d_geo - pm.d_geo)))
    ok = max(worst.values()) <= 1e-9
    record("reward telescoping", ok,
           f"1000 trajectories, max |sum - (d0 - dT)| point {worst['point']:.1e}, region {worst['region']:.1e}")


def _golden_cases():
    pick, place = skill_reward_config("pick"), skill_reward_config("place")
    od, cf = skill_reward_config("open_drawer"), skill_reward_config("close_fridge")
    q = lambda v: M(d_ee_h=0.0, d_a_g=abs(v - 0.45), d_ee_r=0.4, joint=v)
    return [
        ("point progress outside shaping radius", point_goal_reward(StepContext(M(d_geo=2.0, d_ang=0.3),
                                                                              M(d_geo=1.9, d_ang=0.1))).reward, 0.098),
        ("idle at goal", point_goal_reward(StepContext(M(d_geo=0.0, d_ang=0.1), M(d_geo=0.0, d_ang=0.1))).reward,
         -0.002),
        ("point success bonus", point_goal_reward(StepContext(M(d_geo=0.2, d_ang=0.3), M(d_geo=0.2, d_ang=0.3),
                                                              stop=True)).terms["succ"], 2.5),
        ("collision 150 N", -region_goal_reward(StepContext(M(d_geo=1, d_ang=0), M(d_geo=1, d_ang=0),
                                                            collision_step=150.0)).terms["col"], 0.15),
        ("collision 400 N capped", -region_goal_reward(StepContext(M(d_geo=1, d_ang=0), M(d_geo=1, d_ang=0),
                                                                   collision_step=400.0)).terms["col"], 0.2),
        ("region success", region_goal_reward(StepContext(M(d_geo=0, d_ang=0), M(d_geo=0, d_ang=0), stop=True,
                                                          collision_step=30.0)).reward, 2.5 - 0.03 - 0.002),
        ("pick approach", pick_reward(StepContext(M(d_ee_o=0.5, d_ee_r=0.3), M(d_ee_o=0.4, d_ee_r=0.3)),
                                      pick).terms["approach"], 0.4),
        ("drawer progress", articulated_reward(StepContext(q(0.2), q(0.3), holding=True), od,
                                               "open_drawer").terms["progress"], 0.2),
    ], [
        ("pick collision budget", pick_reward(StepContext(M(d_ee_o=0.3, d_ee_r=0.3), M(d_ee_o=0.3, d_ee_r=0.3),
                                                          collision_accum=5000.5), pick).failure, COLLISION_BUDGET),
        ("place drop at 0.16 m", place_reward(StepContext(M(d_o_goal=0.16, d_ee_r=0.3), M(d_o_goal=0.16, d_ee_r=0.3),
                                                          released=True), place).failure, DROP),
        ("drawer too fast", articulated_reward(StepContext(q(0.2), q(0.32), holding=True), od,
                                               "open_drawer").failure, TOO_FAST),
        ("close fridge success", articulated_reward(StepContext(M(d_ee_h=0.5, d_a_g=0.1, d_ee_r=0.1, joint=0.1),
                                                                M(d_ee_h=0.5, d_a_g=0.1, d_ee_r=0.1, joint=0.1)),
                                                    cf, "close_fridge").success, True),
    ]


def test_reward_golden_values():
    values, flags = _golden_cases()
    bad = [n for n, got, want in values if abs(got - want) > 1e-12]
    bad += [n for n, got, want in flags if got != want]
    record("reward constant audit", not bad,
           f"{len(values) + len(flags) - len(bad)}/{len(values) + len(flags)} golden cases at 1e-12"
           + (f"; failing: {bad}" if bad else ""))


# -- chains ---------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def layouts():
    return generate_layouts(0)


@pytest.fixture(scope="module")
def oracle_runs(layouts):
    eps = {t: generate_episodes(t, layouts, "cross_config", 500, seed=0) for t in TASKS}
    t0 = time.perf_counter()
    runs = {t: run_chains(eps[t], OracleBank(), [0], ChainConfig()) for t in TASKS}
    return runs, time.perf_counter() - t0


def test_oracle_chain_sanity(oracle_runs):
    runs, elapsed = oracle_runs
    rates = {t: progressive_rates(runs[t]).success_rate for t in TASKS}
    ok = all(r >= 0.9 for r in rates.values()) and elapsed < 300
    detail = ", ".join(f"{t} {r:.3f}" for t, r in rates.items())
    record("oracle chain sanity", ok, f"full-task completion {detail} (>= 0.90, 500 episodes each); "
                                      f"{elapsed:.0f} s (< 300 s)")


def test_monotone_completion(oracle_runs):
    runs, _ = oracle_runs
    trs = [t for ts in runs.values() for t in ts][:1000]
    prefix_ok = all(all(a >= b for a, b in zip(t.vector, t.vector[1:])) for t in trs)
    rates_ok = True
    for task in TASKS:
        sub = [t for t in trs if t.task == task]
        if sub:
            m = progressive_rates(sub).mean
            rates_ok &= all(a >= b for a, b in zip(m, m[1:]))
            rates_ok &= len(m) == len(STAGES[task])
    record("monotone completion", prefix_ok and rates_ok and len(trs) == 1000,
           f"{len(trs)} transcripts, prefix vectors {prefix_ok}, non-increasing rates {rates_ok}")


def test_handoff_noise_trend(layouts):
    eps = []
    for t in TASKS:
        eps += generate_episodes(t, layouts, "cross_config", 170, seed=5)
    rows = handoff_noise(eps, [0.0, 0.1, 0.2, 0.3], seed=0)
    order = all(r.mobile_skill >= r.stationary_skill for r in rows)
    gap = rows[-1].gap
    detail = "; ".join(f"sigma {r.sigma}: mobile {r.mobile_skill:.3f} stationary {r.stationary_skill:.3f}"
                       for r in rows)
    record("hand-off robustness trend", order and gap >= 0.10 and len(eps) >= 500,
           f"{len(eps)} episodes; {detail}; gap at 0.3 = {100 * gap:.1f} pp (>= 10)")


# -- learning --------------------------------------------------------------------------------

RL_SEEDS = range(5)


def test_desk_scale_rl():
    train = generate_episodes("navroom", None, "train", 1000, seed=0)
    held = generate_episodes("navroom", None, "cross_config", 100, seed=0)
    cfg = PPOConfig(n_envs=16, total_steps=1_000_000)
    finals, to60 = {"region": [], "point": []}, {"region": [], "point": []}
    times = {"region": 0.0, "point": 0.0}
    for mode in ("region", "point"):
        for seed in RL_SEEDS:
            t0 = time.perf_counter()
            res = train_skill("navigate", train, held, cfg, seed=seed, mode=mode, eval_every=20)
            times[mode] += time.perf_counter() - t0
            finals[mode].append(res.final_success)
            to60[mode].append(res.steps_to(0.6))
    med_final = float(np.median(finals["region"]))
    med_r, med_p = float(np.median(to60["region"])), float(np.median(to60["point"]))
    ok = med_final >= 0.8 and med_r <= med_p and max(times.values()) < 7200
    record("desk-scale RL", ok,
           f"region final success median {med_final:.2f} (>= 0.80) {finals['region']}; steps to 60%: region "
           f"{med_r:.0f}, point {med_p:.0f}; wall time region {times['region']:.0f} s, point {times['point']:.0f} s")


def test_ppo_correctness():
    torch.manual_seed(0)
    policy = PolicyNet(4, {"type": "continuous", "dim": 2}, hidden=16).double()
    g = torch.Generator().manual_seed(1)
    obs = torch.randn(3, 4, generator=g, dtype=torch.float64)
    with torch.no_grad():
        d, v = policy.dist(obs)
        act = d.sample()
        old = policy.log_prob(d, act) + torch.tensor([0.05, -0.04, 0.03], dtype=torch.float64)
    adv = torch.tensor([1.0, -0.5, 0.25], dtype=torch.float64)
    batch = (obs, act, old, adv, v + 0.02, v.clone())
    cfg = PPOConfig()
    loss, _ = ppo_losses(policy, *batch, cfg)
    loss.backward()
    worst = 0.0
    for p in policy.parameters():
        flat = p.data.view(-1)
        for i in range(min(flat.numel(), 6)):
            o = flat[i].item()
            with torch.no_grad():
                flat[i] = o + 1e-6
                up = ppo_losses(policy, *batch, cfg)[0].item()
                flat[i] = o - 1e-6
                dn = ppo_losses(policy, *batch, cfg)[0].item()
                flat[i] = o
            fd, an = (up - dn) / 2e-6, p.grad.view(-1)[i].item()
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    r = np.array([[1.0], [0.5], [2.0]])
    vals = np.array([[0.3], [0.2], [0.1]])
    dones = np.array([[False], [False], [True]])
    gae, _ = compute_gae(r, vals, dones, np.array([9.0]), 1.0, 1.0)
    mc = np.array([[3.5 - 0.3], [2.5 - 0.2], [2.0 - 0.1]])
    gae_ok = np.allclose(gae, mc, rtol=0, atol=1e-15)
    record("PPO correctness", worst <= 1e-4 and gae_ok,
           f"max relative FD error {worst:.1e} (<= 1e-4); GAE(1,1) == Monte-Carlo {gae_ok}")


# -- reproducibility ----------------------------------------------------------------------------


def _rerun(out: Path, dest: Path) -> int:
    argv = json.loads((out / "manifest.json").read_text())["argv"]
    i = argv.index("--out")
    return main(argv[:i + 1] + [str(dest)] + argv[i + 2:])


def _same_outputs(a: Path, b: Path) -> bool:
    names = json.loads((a / "manifest.json").read_text())["outputs"]
    return all((a / n).read_bytes() == (b / n).read_bytes() for n in names)


def test_determinism(tmp_path):
    results = {}
    gen = tmp_path / "gen"
    assert main(["gen", "--task", "tidyhouse", "--split", "train", "--count", "20", "--seed", "3",
                 "--out", str(gen)]) == 0
    assert _rerun(gen, tmp_path / "gen2") == 0
    results["gen"] = _same_outputs(gen, tmp_path / "gen2")
    eps = str(gen / "episodes.jsonl")
    tr = tmp_path / "train"
    assert main(["train", "--skill", "pick", "--episodes", eps, "--steps", "1000", "--eval-count", "5",
                 "--seed", "2", "--out", str(tr)]) == 0
    assert _rerun(tr, tmp_path / "train2") == 0
    results["train --steps 1000"] = _same_outputs(tr, tmp_path / "train2")
    ev = tmp_path / "eval"
    assert main(["eval", "--task", "tidyhouse", "--oracle", "--episodes", eps, "--seeds", "2",
                 "--out", str(ev)]) == 0
    assert _rerun(ev, tmp_path / "eval2") == 0
    results["eval --oracle"] = _same_outputs(ev, tmp_path / "eval2")
    record("determinism", all(results.values()),
           ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in results.items()))
