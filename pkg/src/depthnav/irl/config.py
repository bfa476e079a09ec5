"""Trainer hyperparameters and the flat ``key = value`` config format.

Defaults are the full-scale training settings. Desk-scale runs override the
trunk width, batch size, buffer capacity and encoder strides from a file.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.99
    alpha: float = 0.5  # expert/learner mixture weight of the chi^2 penalty
    r_max: float = 0.0
    r_min: float = -2.0
    learner_goal_reward: str = "r_min"  # absorbing reward for learner episodes that reach the goal
    buffer_capacity: int = 600_000
    batch_size: int = 128
    embedding_dim: int = 128
    random_initial_actions: int = 1000
    critic_lr: float = 3e-4
    autoencoder_lr: float = 3e-4
    actor_lr: float = 3e-5
    temperature_lr: float = 3e-5
    temperature_beta1: float = 0.5
    init_temperature: float = 0.1
    target_entropy: float = -20.0
    value_uses_temperature: bool = True
    value_samples: int = 1
    lambda_z: float = 1e-7
    lambda_theta: float = 1e-7
    rho_q: float = 0.005
    rho_enc: float = 0.01
    critic_target_update_freq: int = 1
    actor_update_freq: int = 1
    conv_layers: int = 4
    conv_channels: int = 32
    conv_strides: tuple = (2, 1, 1, 1)
    input_pool: int = 1  # average-pool the depth image by this factor before the encoder
    hidden_dim: int = 1024
    trunk_layers: int = 4
    log_std_min: float = -10.0
    log_std_max: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.r_min > self.r_max:
            raise ConfigError("r_min must not exceed r_max")
        if self.learner_goal_reward not in ("r_min", "r_max"):
            raise ConfigError("learner_goal_reward must be 'r_min' or 'r_max'")
        if len(self.conv_strides) != self.conv_layers:
            raise ConfigError(f"conv_strides needs {self.conv_layers} entries, got {len(self.conv_strides)}")
        if any(s not in (1, 2) for s in self.conv_strides):
            raise ConfigError("conv strides must be 1 or 2")
        for name in ("batch_size", "buffer_capacity", "embedding_dim", "hidden_dim", "value_samples",
                     "critic_target_update_freq", "actor_update_freq", "trunk_layers", "conv_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.input_pool not in (1, 2, 4):
            raise ConfigError("input_pool must be 1, 2 or 4")
        if self.log_std_min >= self.log_std_max:
            raise ConfigError("log_std_min must be below log_std_max")

    @property
    def q_bounds(self) -> tuple[float, float]:
        return self.r_min / (1.0 - self.gamma), self.r_max / (1.0 - self.gamma)

    def with_overrides(self, **kw) -> "TrainerConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _coerce(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw.replace("_", ""))
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.replace(",", " ").split())
    return raw


def parse_kv(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Duplicate keys are an error."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def config_from_kv(kv: dict[str, str], base: TrainerConfig = TrainerConfig(), strict: bool = True) -> TrainerConfig:
    known = {f.name: getattr(base, f.name) for f in fields(base)}
    updates = {}
    for key, raw in kv.items():
        if key not in known:
            if strict:
                raise ConfigError(f"unknown trainer key {key!r}")
            continue
        try:
            updates[key] = _coerce(raw, known[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return dataclasses.replace(base, **updates)


def load_config(path) -> TrainerConfig:
    return config_from_kv(parse_kv(Path(path).read_text()))


def format_config(cfg: TrainerConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
