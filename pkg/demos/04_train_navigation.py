# %% [markdown]
# # Region goals versus point goals for learned navigation
#
# Both policies see the same observation (the target object, not the goal
# cell). The point-goal reward is computed toward one hidden cell per episode,
# so the same observation can be rewarded for going to different places.
# The region-goal reward accepts any cell from which the next skill can start.
#
# The full comparison (1M steps, five seeds) lives in the acceptance suite;
# this script trains for 200k steps, which takes a few minutes on one core.

# %%
from __future__ import annotations

import sys

from mobilemanip.episodes import generate_episodes
from mobilemanip.rl import PPOConfig, train_skill

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200_000
train = generate_episodes("navroom", None, "train", 1000, seed=0)
held_out = generate_episodes("navroom", None, "cross_config", 100, seed=0)
cfg = PPOConfig(n_envs=16, total_steps=steps)

# %%
for mode in ("region", "point"):
    res = train_skill("navigate", train, held_out, cfg, seed=0, mode=mode, eval_every=20)
    curve = " ".join(f"{sr:.2f}" for _, sr, _ in res.curve)
    print(f"{mode:6s} held-out success by evaluation: {curve}")
