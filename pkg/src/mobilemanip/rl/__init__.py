"""PPO training for individual skills."""

from .checkpoint import CheckpointError, load_policy, read_header, save_policy
from .ppo import (
    NonFiniteLossError,
    PolicyNet,
    PPOConfig,
    RolloutBuffer,
    collect_rollouts,
    compute_gae,
    ppo_losses,
    ppo_update,
)
from .train import TrainResult, evaluate, read_curve, train_skill, write_curve

__all__ = [
    "CheckpointError", "load_policy", "read_header", "save_policy", "NonFiniteLossError", "PolicyNet",
    "PPOConfig", "RolloutBuffer", "collect_rollouts", "compute_gae", "ppo_losses", "ppo_update",
    "TrainResult", "evaluate", "read_curve", "train_skill", "write_curve",
]
