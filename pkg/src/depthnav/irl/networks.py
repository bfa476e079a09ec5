"""Encoder, actor, critic and decoder networks.

A single stack of conv layers is shared. The critic and the actor each put
their own dense + tanh layer on top of it to get a 128-d latent. Only the
critic path updates the conv weights: the actor always sees them detached.
Trunks are D2RL MLPs, meaning the trunk input is concatenated back onto every
hidden layer.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from ..nn import autodiff as ad
from ..nn.autodiff import Parameter, Tensor
from ..nn.layers import Layer, LayerSpec, Sequential, flatten
from ..trajgen import DPSI_MAX, DR_MAX, N_WAYPOINTS
from .config import TrainerConfig

IMAGE_SIZE = 64
STATE_DIM = 10
ACTION_DIM = 2 * N_WAYPOINTS
GOAL_SCALE = 20.0  # m, goal distances beyond this saturate
SPEED_SCALE = 10.0  # m/s

ACTION_LOW = np.tile([0.0, -DPSI_MAX], N_WAYPOINTS)
ACTION_HIGH = np.tile([DR_MAX, DPSI_MAX], N_WAYPOINTS)
_MID = 0.5 * (ACTION_LOW + ACTION_HIGH)
_HALF = 0.5 * (ACTION_HIGH - ACTION_LOW)
_LOG_2PI = math.log(2.0 * math.pi)


class Obs(NamedTuple):
    """A batch of observations. ``image`` is (B, 64, 64) in [0, 1]."""

    image: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray
    goal: np.ndarray

    def __len__(self):
        return len(self.image)

    @classmethod
    def single(cls, image, velocity, attitude, goal) -> "Obs":
        return cls(np.asarray(image, float)[None], np.asarray(velocity, float)[None],
                   np.asarray(attitude, float)[None], np.asarray(goal, float)[None])

    @classmethod
    def concat(cls, a: "Obs", b: "Obs") -> "Obs":
        return cls(*(np.concatenate([x, y]) for x, y in zip(a, b)))


def normalize_action(a) -> np.ndarray:
    """Physical (dr, dpsi) actions to [-1, 1] per component."""
    return (np.asarray(a, float).reshape(-1, ACTION_DIM) - _MID) / _HALF


def denormalize_action(y) -> np.ndarray:
    return _MID + _HALF * np.asarray(y, float)


def state_features(obs: Obs) -> np.ndarray:
    """(B, 10) vector: velocity, yaw-free attitude and goal, all in the heading frame."""
    q = np.asarray(obs.attitude, float)
    w, x, y, z = q.T
    yaw = np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    c, s = np.cos(yaw), np.sin(yaw)

    def to_heading(vec):
        vec = np.asarray(vec, float)
        return np.column_stack([c * vec[:, 0] + s * vec[:, 1], -s * vec[:, 0] + c * vec[:, 1], vec[:, 2]])

    # remove yaw: q_rel = (cos(yaw/2), 0, 0, -sin(yaw/2)) * q
    hc, hs = np.cos(yaw / 2), np.sin(yaw / 2)
    q_rel = np.column_stack([
        hc * w + hs * z,
        hc * x + hs * y,
        hc * y - hs * x,
        hc * z - hs * w,
    ])
    q_rel *= np.where(q_rel[:, :1] < 0, -1.0, 1.0)
    g = to_heading(obs.goal)
    dist = np.linalg.norm(g, axis=1, keepdims=True)
    g = g / np.maximum(dist, 1e-9) * np.minimum(dist, GOAL_SCALE) / GOAL_SCALE
    return np.column_stack([to_heading(obs.velocity) / SPEED_SCALE, q_rel, g])


def conv_stack(cfg: TrainerConfig, name: str, seed: int) -> Sequential:
    specs = []
    for i, stride in enumerate(cfg.conv_strides):
        specs.append(LayerSpec("conv", 1 if i == 0 else cfg.conv_channels, cfg.conv_channels,
                               "leaky-relu", stride=stride))
    return Sequential(specs, name, seed)


def input_side(cfg: TrainerConfig) -> int:
    return IMAGE_SIZE // cfg.input_pool


def prepare_images(image, pool: int = 1) -> np.ndarray:
    """(B, 64, 64) depth images to (B, side, side), average-pooled when ``pool`` > 1."""
    img = np.asarray(image, float).reshape(-1, IMAGE_SIZE, IMAGE_SIZE)
    if pool == 1:
        return img
    s = IMAGE_SIZE // pool
    return img.reshape(-1, s, pool, s, pool).mean(axis=(2, 4))


def conv_output_side(cfg: TrainerConfig) -> int:
    side = input_side(cfg)
    for s in cfg.conv_strides:
        side = (side - 1) // s + 1
    return side


def conv_features(conv: Sequential, image, pool: int = 1) -> Tensor:
    img = prepare_images(image, pool)
    return flatten(conv(img[:, None]))


class D2RL:
    """MLP whose input is re-concatenated onto every hidden layer."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, layers: int, name: str, seed: int):
        self.hidden = [
            Layer(LayerSpec("dense", in_dim if i == 0 else hidden + in_dim, hidden, "leaky-relu"),
                  f"{name}.{i}", seed + 101 * i)
            for i in range(layers)
        ]
        self.out = Layer(LayerSpec("dense", hidden, out_dim), f"{name}.out", seed + 997)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.hidden for p in layer.parameters()] + self.out.parameters()

    def __call__(self, x) -> Tensor:
        x = ad.as_tensor(x)
        h = x
        for i, layer in enumerate(self.hidden):
            h = layer(h if i == 0 else ad.concat([h, x], axis=1))
        return self.out(h)


class Encoded(NamedTuple):
    conv: Tensor  # flattened conv output
    z: Tensor  # tanh latent
    feats: np.ndarray  # state features


class CriticNet:
    """Single Q head over (z, state features, normalized action), clamped to the Q bounds."""

    def __init__(self, cfg: TrainerConfig, conv: Sequential, name: str = "critic", seed: int = 0):
        self.cfg = cfg
        self.conv = conv
        flat = cfg.conv_channels * conv_output_side(cfg) ** 2
        self.fc = Layer(LayerSpec("dense", flat, cfg.embedding_dim, "tanh"), f"{name}.fc", seed + 1)
        self.trunk = D2RL(cfg.embedding_dim + STATE_DIM + ACTION_DIM, cfg.hidden_dim, 1,
                          cfg.trunk_layers, f"{name}.trunk", seed + 2)
        self.bounds = cfg.q_bounds

    def encoder_parameters(self) -> list[Parameter]:
        return self.conv.parameters() + self.fc.parameters()

    def head_parameters(self) -> list[Parameter]:
        return self.trunk.parameters()

    def parameters(self) -> list[Parameter]:
        return self.encoder_parameters() + self.head_parameters()

    def encode(self, obs: Obs, conv_out: Tensor | None = None) -> Encoded:
        c = conv_features(self.conv, obs.image, self.cfg.input_pool) if conv_out is None else conv_out
        return Encoded(c, self.fc(c), state_features(obs))

    def latent(self, prepared_images) -> Tensor:
        """z for images already passed through :func:`prepare_images`."""
        return self.fc(flatten(self.conv(np.asarray(prepared_images, float)[:, None])))

    def head(self, enc: Encoded, a_norm, clamp: bool = True) -> Tensor:
        x = ad.concat([enc.z, ad.as_tensor(enc.feats), ad.as_tensor(a_norm)], axis=1)
        q = self.trunk(x).reshape(-1)
        return ad.clamp_inward(q, *self.bounds) if clamp else q

    def __call__(self, obs: Obs, action) -> Tensor:
        return self.head(self.encode(obs), normalize_action(action))


class PolicySample(NamedTuple):
    action: Tensor  # physical (dr, dpsi), (B, 20)
    log_prob: Tensor  # (B,)
    a_norm: Tensor  # tanh output in [-1, 1]


class PolicyNet:
    """Tanh-squashed Gaussian over the 20 action components.

    The log-density is that of the squashed [-1, 1] action; the affine
    rescale to physical bounds is a constant offset and is left out.
    With ``block_encoder`` the shared conv output is detached, so this
    network never sends gradient into the conv layers.
    """

    def __init__(self, cfg: TrainerConfig, conv: Sequential, name: str = "actor", seed: int = 0,
                 block_encoder: bool = True):
        self.cfg = cfg
        self.conv = conv
        self.block_encoder = block_encoder
        flat = cfg.conv_channels * conv_output_side(cfg) ** 2
        self.fc = Layer(LayerSpec("dense", flat, cfg.embedding_dim, "tanh"), f"{name}.fc", seed + 1)
        self.trunk = D2RL(cfg.embedding_dim + STATE_DIM, cfg.hidden_dim, 2 * ACTION_DIM,
                          cfg.trunk_layers, f"{name}.trunk", seed + 2)

    def parameters(self) -> list[Parameter]:
        """Parameters this network's optimizer owns (the conv only when not blocked)."""
        own = self.fc.parameters() + self.trunk.parameters()
        return own if self.block_encoder else self.conv.parameters() + own

    def distribution(self, obs: Obs, conv_out: Tensor | None = None):
        c = conv_features(self.conv, obs.image, self.cfg.input_pool) if conv_out is None else conv_out
        if self.block_encoder:
            c = ad.detach(c)
        x = ad.concat([self.fc(c), ad.as_tensor(state_features(obs))], axis=1)
        out = self.trunk(x)
        mean = out[:, :ACTION_DIM]
        lo, hi = self.cfg.log_std_min, self.cfg.log_std_max
        log_std = lo + 0.5 * (hi - lo) * (ad.tanh(out[:, ACTION_DIM:]) + 1.0)
        return mean, log_std

    def sample(self, obs: Obs, gen: np.random.Generator, conv_out: Tensor | None = None,
               deterministic: bool = False) -> PolicySample:
        mean, log_std = self.distribution(obs, conv_out)
        if deterministic:
            u = mean
            eps = np.zeros(mean.shape)
        else:
            eps = gen.standard_normal(mean.shape)
            u = mean + ad.exp(log_std) * eps
        y = ad.tanh(u)
        gauss = (-0.5 * eps * eps - 0.5 * _LOG_2PI) - log_std
        # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|
        jac = 2.0 * (math.log(2.0) - u - ad.softplus(-2.0 * u))
        log_prob = (gauss - jac).sum(axis=1)
        action = ad.as_tensor(_MID) + ad.as_tensor(_HALF) * y
        return PolicySample(action, log_prob, y)

    def act(self, obs: Obs, gen: np.random.Generator | None = None, deterministic: bool = True) -> np.ndarray:
        with ad.no_grad():
            s = self.sample(obs, gen if gen is not None else np.random.default_rng(0), deterministic=deterministic)
        return s.action.data


class Decoder:
    """Dense layer to a feature map, then transposed convs mirroring the encoder strides."""

    def __init__(self, cfg: TrainerConfig, name: str = "decoder", seed: int = 0):
        self.cfg = cfg
        self.side = conv_output_side(cfg)
        ch = cfg.conv_channels
        self.fc = Layer(LayerSpec("dense", cfg.embedding_dim, ch * self.side**2, "leaky-relu"), f"{name}.fc", seed)
        strides = list(reversed(cfg.conv_strides))
        specs = []
        for i, s in enumerate(strides):
            last = i == len(strides) - 1
            specs.append(LayerSpec("deconv", ch, 1 if last else ch, "none" if last else "leaky-relu",
                                   stride=s, output_padding=1 if s == 2 else 0))
        self.deconv = Sequential(specs, f"{name}.deconv", seed + 1)

    def parameters(self) -> list[Parameter]:
        return self.fc.parameters() + self.deconv.parameters()

    def weights(self) -> list[Parameter]:
        return [self.fc.weight] + [layer.weight for layer in self.deconv.layers]

    def __call__(self, z) -> Tensor:
        h = self.fc(z)
        h = h.reshape(-1, self.cfg.conv_channels, self.side, self.side)
        side = input_side(self.cfg)
        return self.deconv(h).reshape(-1, side, side)


class Agent:
    """Online and target networks with stable parameter names."""

    def __init__(self, cfg: TrainerConfig):
        self.cfg = cfg
        seed = cfg.seed
        self.conv = conv_stack(cfg, "enc.conv", seed * 1000 + 11)
        self.critic = CriticNet(cfg, self.conv, "critic", seed * 1000 + 23)
        self.actor = PolicyNet(cfg, self.conv, "actor", seed * 1000 + 37)
        self.decoder = Decoder(cfg, "decoder", seed * 1000 + 53)
        self.target_conv = conv_stack(cfg, "target.conv", seed * 1000 + 11)
        self.target = CriticNet(cfg, self.target_conv, "target.critic", seed * 1000 + 23)
        for t, o in zip(self.target.parameters(), self.critic.parameters()):
            t.data[...] = o.data

    def all_parameters(self) -> list[Parameter]:
        seen, out = set(), []
        groups = (self.critic.parameters(), self.actor.parameters(), self.decoder.parameters(),
                  self.target.parameters())
        for group in groups:
            for p in group:
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.all_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.all_parameters():
            if p.name not in arrays:
                raise KeyError(f"checkpoint lacks parameter {p.name!r}")
            if arrays[p.name].shape != p.data.shape:
                raise ValueError(f"{p.name}: shape {arrays[p.name].shape} != {p.data.shape}")
            p.data[...] = arrays[p.name]
