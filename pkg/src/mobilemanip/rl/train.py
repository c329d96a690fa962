"""Skill training loop, held-out evaluation and learning curves."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from ..envs import NavBatchEnv, SkillEnv, VecSkillEnv
from ..episodes import EpisodeSpec
from ..sampler import InitNoise
from .checkpoint import save_policy
from .ppo import EpisodeStats, PolicyNet, PPOConfig, collect_rollouts, ppo_update

log = logging.getLogger(__name__)

CURVE_HEADER = ("step", "success_rate", "reward_mean")


@dataclass
class TrainResult:
    policy: PolicyNet
    curve: list = field(default_factory=list)  # (step, success_rate, reward_mean)
    metrics: list = field(default_factory=list)

    def steps_to(self, rate: float) -> float:
        """First logged step whose held-out success reaches ``rate``; inf if never."""
        for step, sr, _ in self.curve:
            if sr >= rate:
                return step
        return math.inf

    @property
    def final_success(self) -> float:
        return self.curve[-1][1] if self.curve else 0.0


def make_env(skill: str, episodes, n_envs: int, seed: int, mode: str = "region", variant: str = "mobile",
             init_variant: Optional[str] = None, radius: float = 2.0, noise: Optional[InitNoise] = None,
             nav_cfg=None, fixed_assignment: bool = False):
    if skill == "navigate":
        return NavBatchEnv(episodes, n_envs, mode, seed=seed, radius=radius, nav_cfg=nav_cfg,
                           fixed_assignment=fixed_assignment)
    return VecSkillEnv([
        SkillEnv(skill, episodes, variant, seed=seed * 1000 + i, noise=noise, init_variant=init_variant,
                 radius=radius)
        for i in range(n_envs)
    ])


def evaluate(policy: PolicyNet, skill: str, episodes: Sequence[EpisodeSpec], seed: int = 0,
             mode: str = "region", variant: str = "mobile", n: Optional[int] = None, **env_kw) -> tuple[float, float]:
    """Success rate and mean return over one rollout per held-out episode."""
    n = len(episodes) if n is None else n
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        if skill == "navigate":
            env = NavBatchEnv(episodes, n, mode, seed=seed, fixed_assignment=True, **env_kw)
            obs = env.reset()
            done = np.zeros(n, bool)
            success = np.zeros(n, bool)
            ret = np.zeros(n)
            while not done.all():
                a, _, _ = policy.act(obs)
                obs, r, te, tr, info = env.step(a)
                live = ~done
                ret[live] += r[live]
                finished = live & (te | tr)
                success[finished] = info["success"][finished]
                done |= finished
            return float(success.mean()), float(ret.mean())
        env = SkillEnv(skill, episodes, variant, seed=seed, **env_kw)
        succ, rets = [], []
        for _ in range(n):
            obs = env.reset()
            total = 0.0
            while True:
                a, _, _ = policy.act(obs[None])
                obs, r, te, tr, info = env.step(a[0])
                total += r
                if te or tr:
                    break
            succ.append(info["success"])
            rets.append(total)
        return float(np.mean(succ)), float(np.mean(rets))


def train_skill(
    skill: str,
    episodes: Sequence[EpisodeSpec],
    eval_episodes: Sequence[EpisodeSpec],
    cfg: PPOConfig = PPOConfig(),
    seed: int = 0,
    mode: str = "region",
    variant: str = "mobile",
    init_variant: Optional[str] = None,
    eval_every: int = 4,
    radius: float = 2.0,
    nav_cfg=None,
    checkpoint: Optional[Path] = None,
    curve_path: Optional[Path] = None,
    meta: Optional[dict] = None,
    single_thread: bool = True,
) -> TrainResult:
    """PPO on one skill; evaluates on ``eval_episodes`` every ``eval_every`` updates."""
    if single_thread:
        torch.set_num_threads(1)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    env = make_env(skill, episodes, cfg.n_envs, seed, mode, variant, init_variant, radius, nav_cfg=nav_cfg)
    policy = PolicyNet(env.obs_dim, env.action_spec, cfg.hidden)
    opt = torch.optim.Adam(policy.parameters(), lr=cfg.lr, eps=1e-5)
    n_updates = cfg.n_updates
    result = TrainResult(policy)
    eval_kw = dict(seed=10_000 + seed, mode=mode, variant=variant)
    if skill == "navigate":
        eval_kw.update(radius=radius, nav_cfg=nav_cfg)

    def log_eval(step):
        sr, rm = evaluate(policy, skill, eval_episodes, **eval_kw) if eval_episodes else (0.0, 0.0)
        result.curve.append((step, sr, rm))
        log.info("step %d success %.3f reward %.3f", step, sr, rm)

    obs = env.reset() if n_updates else None
    stats = EpisodeStats()
    for u in range(n_updates):
        if cfg.lr_decay:
            for g in opt.param_groups:
                g["lr"] = cfg.lr * (1.0 - u / n_updates)
        buf, obs = collect_rollouts(policy, env, obs, cfg, stats)
        m = ppo_update(policy, opt, buf, cfg, rng)
        m["train_success"] = stats.rate()
        result.metrics.append(m)
        stats = EpisodeStats()
        if (u + 1) % eval_every == 0 or u == n_updates - 1:
            log_eval((u + 1) * cfg.batch_size)
    if n_updates == 0:
        log_eval(0)
    if curve_path is not None:
        write_curve(curve_path, result.curve)
    if checkpoint is not None:
        info = {"skill": skill, "mode": mode, "variant": variant, "seed": seed, "config": cfg.to_dict()}
        save_policy(checkpoint, policy, {**info, **(meta or {})})
    return result


def write_curve(path, curve) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for step, sr, rm in curve:
            w.writerow([step, f"{sr:.6f}", f"{rm:.6f}"])


def read_curve(path) -> list:
    with open(path) as f:
        rows = list(csv.reader(f))
    if tuple(rows[0]) != CURVE_HEADER:
        raise ValueError(f"{path}: not a learning curve")
    return [(int(a), float(b), float(c)) for a, b, c in rows[1:]]
