"""Proximal policy optimization on low-dimensional observations."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

LOG_STD_INIT = -1.0


class NonFiniteLossError(RuntimeError):
    pass


@dataclass(frozen=True)
class PPOConfig:
    n_envs: int = 64
    rollout_len: int = 128
    minibatches: int = 2
    epochs: int = 2
    clip: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    lr: float = 3e-4
    lr_decay: bool = True
    # not given by the method description; the usual defaults of PPO codebases
    gamma: float = 0.99
    gae_lambda: float = 0.95
    total_steps: int = 1_000_000
    hidden: int = 256

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def batch_size(self) -> int:
        return self.n_envs * self.rollout_len

    @property
    def n_updates(self) -> int:
        return math.ceil(self.total_steps / self.batch_size) if self.total_steps > 0 else 0


class PolicyNet(nn.Module):
    """Two-layer MLP trunk with a categorical or tanh-mean Gaussian head."""

    def __init__(self, obs_dim: int, action_spec: dict, hidden: int = 256):
        super().__init__()
        self.obs_dim = obs_dim
        self.action_spec = dict(action_spec)
        self.discrete = action_spec["type"] == "discrete"
        n_out = action_spec["n"] if self.discrete else action_spec["dim"]
        self.trunk = nn.Sequential(nn.Linear(obs_dim, hidden), nn.Tanh(), nn.Linear(hidden, hidden), nn.Tanh())
        self.pi = nn.Linear(hidden, n_out)
        self.v = nn.Linear(hidden, 1)
        if not self.discrete:
            self.log_std = nn.Parameter(torch.full((n_out,), LOG_STD_INIT))
        for m in self.trunk:
            if isinstance(m, nn.Linear):
                nn.init.orthogonal_(m.weight, math.sqrt(2))
                nn.init.zeros_(m.bias)
        nn.init.orthogonal_(self.pi.weight, 0.01)
        nn.init.zeros_(self.pi.bias)
        nn.init.orthogonal_(self.v.weight, 1.0)
        nn.init.zeros_(self.v.bias)
        # running observation statistics, updated during rollouts
        self.register_buffer("obs_mean", torch.zeros(obs_dim))
        self.register_buffer("obs_var", torch.ones(obs_dim))
        self.register_buffer("obs_count", torch.tensor(1e-4))

    @torch.no_grad()
    def update_obs_stats(self, obs: np.ndarray) -> None:
        x = torch.as_tensor(obs, dtype=torch.float64).reshape(-1, self.obs_dim)
        n = x.shape[0]
        mean, var = x.mean(0), x.var(0, unbiased=False)
        tot = self.obs_count.double() + n
        delta = mean - self.obs_mean.double()
        new_mean = self.obs_mean.double() + delta * n / tot
        m2 = self.obs_var.double() * self.obs_count.double() + var * n + delta**2 * self.obs_count.double() * n / tot
        self.obs_mean.copy_(new_mean)
        self.obs_var.copy_(m2 / tot)
        self.obs_count.copy_(tot)

    def normalize(self, obs: torch.Tensor) -> torch.Tensor:
        return torch.clamp((obs - self.obs_mean) / torch.sqrt(self.obs_var + 1e-8), -10.0, 10.0)

    def dist(self, obs: torch.Tensor):
        h = self.trunk(self.normalize(obs))
        if self.discrete:
            return torch.distributions.Categorical(logits=self.pi(h)), self.v(h).squeeze(-1)
        mean = torch.tanh(self.pi(h))
        return torch.distributions.Normal(mean, self.log_std.exp()), self.v(h).squeeze(-1)

    def log_prob(self, d, actions: torch.Tensor) -> torch.Tensor:
        lp = d.log_prob(actions)
        return lp if self.discrete else lp.sum(-1)

    def entropy(self, d) -> torch.Tensor:
        e = d.entropy()
        return e if self.discrete else e.sum(-1)

    @torch.no_grad()
    def act(self, obs: np.ndarray, deterministic: bool = False):
        o = torch.as_tensor(obs, dtype=torch.float32)
        d, v = self.dist(o)
        if deterministic:
            a = d.probs.argmax(-1) if self.discrete else d.mean
        else:
            a = d.sample()
        return a.numpy(), self.log_prob(d, a).numpy(), v.numpy()

    @torch.no_grad()
    def value(self, obs: np.ndarray) -> np.ndarray:
        return self.dist(torch.as_tensor(obs, dtype=torch.float32))[1].numpy()


@dataclass
class RolloutBuffer:
    """Arrays shaped (T, N, ...); ``terminated`` and ``truncated`` kept apart."""

    obs: np.ndarray
    actions: np.ndarray
    logprobs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    last_value: np.ndarray
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.rewards.size


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    last_value: np.ndarray,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over (T, N) arrays.

    ``dones[t]`` marks that the episode ended after step ``t``; rewards of
    truncated steps must already contain the bootstrap term.
    """
    T = rewards.shape[0]
    adv = np.zeros_like(rewards, dtype=np.float64)
    last = np.zeros(rewards.shape[1:], dtype=np.float64)
    for t in reversed(range(T)):
        nxt = last_value if t == T - 1 else values[t + 1]
        live = 1.0 - dones[t].astype(np.float64)
        delta = rewards[t] + gamma * nxt * live - values[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
    return adv, adv + values


@dataclass
class EpisodeStats:
    successes: int = 0
    episodes: int = 0
    reward_sum: float = 0.0

    def rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0


def collect_rollouts(policy: PolicyNet, env, obs: np.ndarray, cfg: PPOConfig, stats: Optional[EpisodeStats] = None):
    """Run ``cfg.rollout_len`` steps in every env; returns (buffer, next obs).

    A truncated episode bootstraps with V(final observation), folded into
    its last reward; a terminated one does not.
    """
    T, N = cfg.rollout_len, env.n_envs
    discrete = policy.discrete
    obs_buf = np.zeros((T, N, env.obs_dim), np.float32)
    act_buf = np.zeros((T, N) if discrete else (T, N, policy.action_spec["dim"]), np.int64 if discrete else np.float32)
    logp = np.zeros((T, N), np.float32)
    rew = np.zeros((T, N))
    val = np.zeros((T, N))
    term = np.zeros((T, N), bool)
    trunc = np.zeros((T, N), bool)
    ep_reward = getattr(env, "_ep_reward", np.zeros(N))
    for t in range(T):
        a, lp, v = policy.act(obs)
        obs_buf[t], act_buf[t], logp[t], val[t] = obs, a, lp, v
        obs, r, te, tr, info = env.step(a)
        r = np.asarray(r, dtype=np.float64)
        ep_reward = ep_reward + r
        if tr.any():
            r = r + cfg.gamma * np.where(tr, policy.value(info["final_obs"]), 0.0)
        rew[t], term[t], trunc[t] = r, te, tr
        done = te | tr
        if stats is not None and done.any():
            stats.episodes += int(done.sum())
            stats.successes += int(np.asarray(info["success"])[done].sum())
            stats.reward_sum += float(ep_reward[done].sum())
        ep_reward = np.where(done, 0.0, ep_reward)
    env._ep_reward = ep_reward
    policy.update_obs_stats(obs_buf)
    buf = RolloutBuffer(obs_buf, act_buf, logp, rew, val, term, trunc, policy.value(obs).astype(np.float64))
    buf.advantages, buf.returns = compute_gae(rew, val, term | trunc, buf.last_value, cfg.gamma, cfg.gae_lambda)
    return buf, obs


def ppo_losses(policy: PolicyNet, obs, actions, old_logp, adv, returns, old_values, cfg: PPOConfig):
    """Clipped surrogate, clipped value loss and entropy for one minibatch."""
    d, v = policy.dist(obs)
    logp = policy.log_prob(d, actions)
    ratio = torch.exp(logp - old_logp)
    s1 = ratio * adv
    s2 = torch.clamp(ratio, 1 - cfg.clip, 1 + cfg.clip) * adv
    policy_loss = -torch.min(s1, s2).mean()
    v_clipped = old_values + torch.clamp(v - old_values, -cfg.clip, cfg.clip)
    value_loss = 0.5 * torch.max((v - returns) ** 2, (v_clipped - returns) ** 2).mean()
    entropy = policy.entropy(d).mean()
    total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    with torch.no_grad():
        approx_kl = ((ratio - 1) - (logp - old_logp)).mean()
        clip_frac = ((ratio - 1).abs() > cfg.clip).float().mean()
    return total, {
        "policy_loss": float(policy_loss.detach()),
        "value_loss": float(value_loss.detach()),
        "entropy": float(entropy.detach()),
        "approx_kl": float(approx_kl),
        "clip_frac": float(clip_frac),
    }


def ppo_update(policy: PolicyNet, optimizer, buf: RolloutBuffer, cfg: PPOConfig, rng: np.random.Generator) -> dict:
    n = buf.size
    flat = lambda a: torch.as_tensor(a.reshape(n, *a.shape[2:]))
    obs = flat(buf.obs)
    actions = flat(buf.actions)
    old_logp = flat(buf.logprobs)
    adv = flat(buf.advantages.astype(np.float32))
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    returns = flat(buf.returns.astype(np.float32))
    old_values = flat(buf.values.astype(np.float32))
    mb = n // cfg.minibatches
    metrics: dict = {}
    for _ in range(cfg.epochs):
        perm = torch.as_tensor(rng.permutation(n))
        for k in range(cfg.minibatches):
            idx = perm[k * mb:(k + 1) * mb]
            loss, m = ppo_losses(policy, obs[idx], actions[idx], old_logp[idx], adv[idx], returns[idx],
                                 old_values[idx], cfg)
            if not torch.isfinite(loss):
                raise NonFiniteLossError(f"non-finite loss: {m}")
            optimizer.zero_grad()
            loss.backward()
            m["grad_norm"] = float(nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm))
            optimizer.step()
            for key, val in m.items():
                metrics.setdefault(key, []).append(val)
    return {k: float(np.mean(v)) for k, v in metrics.items()}
