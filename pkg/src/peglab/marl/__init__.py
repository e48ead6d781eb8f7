"""Decentralized PPO learners and the demonstration-guided training modes."""

from peglab.marl.algos import MODES, IterationMetrics, TrainConfig, Trainer, build_learners, run_iteration, shape_rewards
from peglab.marl.learner import AgentLearner, CommGraph, average_reshaped_rewards, neighbor_average_critics
from peglab.marl.ppo import NumericError, PpoConfig, compute_gae, compute_gae_batched, ppo_update
from peglab.marl.rollout import Rollout, collect_rollouts, evaluate

__all__ = [
    "MODES",
    "AgentLearner",
    "CommGraph",
    "IterationMetrics",
    "NumericError",
    "PpoConfig",
    "Rollout",
    "TrainConfig",
    "Trainer",
    "average_reshaped_rewards",
    "build_learners",
    "collect_rollouts",
    "compute_gae",
    "compute_gae_batched",
    "evaluate",
    "neighbor_average_critics",
    "ppo_update",
    "run_iteration",
    "shape_rewards",
]
