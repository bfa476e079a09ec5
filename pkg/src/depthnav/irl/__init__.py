"""Inverse soft-Q learning from depth images with analytic absorbing-state values."""

from .bc import bc_loss, bc_train
from .buffer import ExpertBuffer, ReplayBuffer, expert_transitions
from .config import ConfigError, TrainerConfig, format_config, load_config, parse_kv
from .losses import (
    COLLISION,
    GOAL,
    NONE,
    TERM_NAMES,
    TIMEOUT,
    Temperature,
    TransitionBatch,
    absorbing_rewards,
    absorbing_value,
    actor_loss,
    critic_loss,
    inverse_reward,
    lsiq_terms,
    rae_loss,
    soft_value,
    temperature_step,
)
from .networks import ACTION_DIM, Agent, CriticNet, Decoder, Obs, PolicyNet, normalize_action, state_features
from .trainer import MetricsLog, Trainer

__all__ = [
    "ACTION_DIM", "Agent", "COLLISION", "ConfigError", "CriticNet", "Decoder", "ExpertBuffer", "GOAL",
    "MetricsLog", "NONE", "Obs", "PolicyNet", "ReplayBuffer", "TERM_NAMES", "TIMEOUT", "Temperature",
    "Trainer", "TrainerConfig", "TransitionBatch", "absorbing_rewards", "absorbing_value", "actor_loss",
    "bc_loss", "bc_train", "critic_loss", "expert_transitions", "format_config", "inverse_reward",
    "load_config", "lsiq_terms", "normalize_action", "parse_kv", "rae_loss", "soft_value",
    "state_features", "temperature_step",
]
