"""safepg: policy gradients under trajectory-level probabilistic safety constraints."""

__version__ = "0.1.0"

from .core import Metrics, RandomSource, Trajectory, episode_return, is_safe_episode
from .env import FiniteMDP, NavEnvSpec, builtin_layout, enumerate_trajectories, rollout
from .estimators import (
    IndicatorProducts,
    SafetyCritic,
    classic_pg,
    combined_gradient,
    critic_estimate,
    critic_update,
    indicator_products,
    spg_actor_critic,
    spg_reinforce,
)
from .policy import GaussianRbfPolicy, GatedLinearPolicy, TabularSoftmaxPolicy
from .trainers import DualState, TrainerConfig, dual_update, evaluate, g_hat, sweep, train

__all__ = [
    "Metrics",
    "RandomSource",
    "Trajectory",
    "episode_return",
    "is_safe_episode",
    "FiniteMDP",
    "NavEnvSpec",
    "builtin_layout",
    "enumerate_trajectories",
    "rollout",
    "IndicatorProducts",
    "SafetyCritic",
    "classic_pg",
    "combined_gradient",
    "critic_estimate",
    "critic_update",
    "indicator_products",
    "spg_actor_critic",
    "spg_reinforce",
    "GaussianRbfPolicy",
    "GatedLinearPolicy",
    "TabularSoftmaxPolicy",
    "DualState",
    "TrainerConfig",
    "dual_update",
    "evaluate",
    "g_hat",
    "sweep",
    "train",
]
