"""Inverse soft-Q objective with analytic absorbing values, plus the SAC actor, RAE and temperature updates.

Networks are used through a small duck-typed surface so that tests can drive
the losses with stubs:

* critic: ``encode(obs, conv_out=None) -> Encoded`` and ``head(enc, a_norm) -> Q``
* policy: ``sample(obs, gen, conv_out=None) -> PolicySample``
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..nn import autodiff as ad
from ..nn.autodiff import Tensor, no_grad
from .config import TrainerConfig
from .networks import Obs, normalize_action

NONE, COLLISION, GOAL, TIMEOUT = 0, 1, 2, 3

TERM_NAMES = (
    "expert_reward",
    "learner_penalty",
    "value_nonterminal",
    "expert_terminal",
    "learner_terminal",
    "value_terminal",
)


@dataclass(frozen=True)
class TransitionBatch:
    obs: Obs
    action: np.ndarray  # (B, 20) physical
    next_obs: Obs
    nu: np.ndarray  # (B,) 1.0 when s' is absorbing
    terminal: np.ndarray  # (B,) terminal code
    expert: np.ndarray  # (B,) bool origin flag

    def __len__(self):
        return len(self.action)

    @classmethod
    def concat(cls, a: "TransitionBatch", b: "TransitionBatch") -> "TransitionBatch":
        return cls(Obs.concat(a.obs, b.obs), np.concatenate([a.action, b.action]),
                   Obs.concat(a.next_obs, b.next_obs), np.concatenate([a.nu, b.nu]),
                   np.concatenate([a.terminal, b.terminal]), np.concatenate([a.expert, b.expert]))


def absorbing_value(r_a, gamma: float):
    """Closed-form value of an absorbing state, r_A / (1 - gamma)."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"absorbing value needs gamma in [0, 1), got {gamma}")
    return np.asarray(r_a, dtype=float) / (1.0 - gamma) if np.ndim(r_a) else float(r_a) / (1.0 - gamma)


def absorbing_rewards(batch: TransitionBatch, cfg: TrainerConfig) -> np.ndarray:
    """r_A per row: r_max for expert-origin rows, r_min for learner rows.

    Learner rows that ended at the goal take r_max only when the config says so.
    """
    r = np.where(batch.expert, cfg.r_max, cfg.r_min).astype(float)
    if cfg.learner_goal_reward == "r_max":
        r = np.where(~batch.expert & (batch.terminal == GOAL), cfg.r_max, r)
    return r


def soft_value(critic, obs: Obs, policy, gen: np.random.Generator, n_samples: int = 1,
               temperature: float = 1.0, enc=None, policy_conv=None) -> Tensor:
    """Monte-Carlo E_{a~pi}[Q(s, a) - temperature * log pi(a|s)].

    Actions are sampled without gradient; gradient (if a tape is active)
    flows through Q into the critic only. ``policy_conv`` lets the policy
    reuse conv features already computed by the online critic.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    enc = critic.encode(obs) if enc is None else enc
    total = None
    for _ in range(n_samples):
        with no_grad():
            s = policy.sample(obs, gen, conv_out=policy_conv)
        v = critic.head(enc, s.a_norm.data) - temperature * s.log_prob.data
        total = v if total is None else total + v
    return total * (1.0 / n_samples)


def _next_values(target_critic, policy, batch: TransitionBatch, cfg: TrainerConfig, gen, temperature) -> np.ndarray:
    with no_grad():
        return soft_value(target_critic, batch.next_obs, policy, gen, cfg.value_samples, temperature).data


def inverse_reward(critic, target_critic, policy, batch: TransitionBatch, cfg: TrainerConfig,
                   gen: np.random.Generator, temperature: float = 1.0) -> np.ndarray:
    """r = Q(s, a) - gamma * [(1 - nu) V(s') + nu V(s_A)], with V(s_A) analytic."""
    with no_grad():
        q = critic(batch.obs, batch.action).data
        v_next = _next_values(target_critic, policy, batch, cfg, gen, temperature)
    v_abs = absorbing_value(absorbing_rewards(batch, cfg), cfg.gamma)
    nu = batch.nu
    return q - cfg.gamma * ((1.0 - nu) * v_next + nu * v_abs)


def _masked_mean(x: Tensor, mask: np.ndarray, count: int) -> Tensor:
    if count == 0:
        return ad.as_tensor(0.0)
    return (x * mask).sum() * (1.0 / count)


def lsiq_terms(q: Tensor, v: Tensor, v_next: np.ndarray, nu: np.ndarray, expert: np.ndarray,
               r_a: np.ndarray, cfg: TrainerConfig) -> dict[str, Tensor]:
    """The six expectations of the objective, each as a scalar tensor.

    Expectations over one origin are averaged over that origin's rows, with
    rows outside the nonterminal/terminal indicator contributing zero.
    """
    g, a = cfg.gamma, cfg.alpha
    nu = np.asarray(nu, float)
    live = 1.0 - nu
    m_e = np.asarray(expert, bool).astype(float)
    m_l = 1.0 - m_e
    n_e, n_l, n = int(m_e.sum()), int(m_l.sum()), len(nu)
    big_r = absorbing_value(r_a, g)

    r = q - g * v_next
    r_sq = r * r
    d_abs = q - big_r
    return {
        "expert_reward": _masked_mean(r - a * r_sq, m_e * live, n_e),
        "learner_penalty": (1.0 - a) * _masked_mean(r_sq, m_l * live, n_l),
        "value_nonterminal": _masked_mean(v - g * v_next, live, n),
        "expert_terminal": _masked_mean(d_abs - a * (d_abs * d_abs), m_e * nu, n_e),
        "learner_terminal": (1.0 - a) * _masked_mean(d_abs * d_abs, m_l * nu, n_l),
        "value_terminal": _masked_mean(v - big_r, nu, n),
    }


def combine_terms(terms: dict[str, Tensor]) -> Tensor:
    """Loss = -J with J = t1 - t2 - t3 + t4 - t5 - t6 in TERM_NAMES order."""
    for name in TERM_NAMES:
        if not np.all(np.isfinite(terms[name].data)):
            raise FloatingPointError(f"critic loss term {name!r} is not finite")
    t = [terms[k] for k in TERM_NAMES]
    objective = t[0] - t[1] - t[2] + t[3] - t[4] - t[5]
    return -objective


class CriticLossOutput(NamedTuple):
    loss: Tensor
    terms: dict
    diagnostics: dict


def critic_loss(critic, target_critic, policy, batch_expert: TransitionBatch, batch_learner: TransitionBatch,
                cfg: TrainerConfig, gen: np.random.Generator, temperature: float = 1.0) -> CriticLossOutput:
    """Negative inverse soft-Q objective with terminal-state treatment.

    Q(s, a) and V(s) are online and carry gradient; V(s') comes from the
    target critic. For absorbing rows the target is r_A / (1 - gamma)
    computed in closed form, never bootstrapped.
    """
    if len(batch_expert) + len(batch_learner) == 0:
        raise ValueError("critic_loss needs at least one transition")
    batch = TransitionBatch.concat(batch_expert, batch_learner)
    enc = critic.encode(batch.obs)
    lo, hi = cfg.q_bounds
    q_raw = critic.head(enc, normalize_action(batch.action), clamp=False)
    q = ad.clamp_inward(q_raw, lo, hi)
    v = soft_value(critic, batch.obs, policy, gen, cfg.value_samples, temperature, enc=enc,
                   policy_conv=ad.detach(enc.conv))
    v_next = _next_values(target_critic, policy, batch, cfg, gen, temperature)
    r_a = absorbing_rewards(batch, cfg)
    terms = lsiq_terms(q, v, v_next, batch.nu, batch.expert, r_a, cfg)
    loss = combine_terms(terms)

    nu = batch.nu.astype(bool)
    v_abs = absorbing_value(r_a, cfg.gamma)
    target = np.where(nu, v_abs, cfg.gamma * v_next)
    reward = q.data - np.where(nu, cfg.gamma * v_abs, cfg.gamma * v_next)
    diag = {
        "q": q.data.copy(),
        "v": v.data.copy(),
        "v_next": v_next,
        "target": target,
        "terminal_target": target[nu],
        "r_a": r_a,
        "nu": batch.nu.copy(),
        "expert": batch.expert.copy(),
        "reward": reward,
        "q_raw_outside": int(np.sum((q_raw.data < lo) | (q_raw.data > hi))),
    }
    # chi^2 penalties per origin, for symmetry checks
    r_live = q.data - cfg.gamma * v_next
    exp_rows, lrn_rows = batch.expert & ~nu, ~batch.expert & ~nu
    n_e, n_l = int(batch.expert.sum()), int((~batch.expert).sum())
    diag["expert_chi2"] = cfg.alpha * float(np.sum(r_live[exp_rows] ** 2)) / max(n_e, 1)
    diag["learner_chi2"] = (1.0 - cfg.alpha) * float(np.sum(r_live[lrn_rows] ** 2)) / max(n_l, 1)
    return CriticLossOutput(loss, {k: float(t.data) for k, t in terms.items()}, diag)


class ActorLossOutput(NamedTuple):
    loss: Tensor
    entropy: float
    mean_log_prob: float


def actor_loss(policy, critic, obs: Obs, temperature: float, gen: np.random.Generator) -> ActorLossOutput:
    """-E[Q(s, a~pi) - temperature * log pi(a|s)] with a reparameterized sample.

    The critic encoding is computed without gradient, and the policy detaches
    the shared conv output, so nothing here reaches the conv weights.
    """
    with no_grad():
        enc = critic.encode(obs)
    s = policy.sample(obs, gen, conv_out=enc.conv)
    q = critic.head(enc, s.a_norm)
    loss = (temperature * s.log_prob - q).mean()
    mlp = float(np.mean(s.log_prob.data))
    return ActorLossOutput(loss, -mlp, mlp)


def rae_loss(encode, decoder, images, lambda_z: float, lambda_theta: float) -> tuple[Tensor, dict]:
    """Reconstruction MSE + lambda_z * E||z||^2 + lambda_theta * ||decoder weights||^2.

    ``encode`` maps an image batch to latents; gradients reach whatever it uses.
    """
    images = np.asarray(images, float)
    z = encode(images)
    recon = decoder(z)
    diff = recon - images.reshape(recon.shape)
    mse = (diff * diff).mean()
    z_pen = (z * z).sum(axis=1).mean()
    w_pen = ad.as_tensor(0.0)
    for w in decoder.weights():
        w_pen = w_pen + (w * w).sum()
    loss = mse + lambda_z * z_pen + lambda_theta * w_pen
    return loss, {"mse": float(mse.data), "z_penalty": float(z_pen.data), "weight_penalty": float(w_pen.data)}


@dataclass
class Temperature:
    """Entropy temperature optimized in log space with a scalar Adam."""

    log_alpha: float
    lr: float = 3e-5
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    m: float = 0.0
    v: float = 0.0
    t: int = 0

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def step(self, entropy: float, target_entropy: float) -> float:
        return temperature_step(self, entropy, target_entropy)


def temperature_gradient(entropy: float, target_entropy: float) -> float:
    """d/d(log alpha) of log_alpha * (H - H_target)."""
    return float(entropy - target_entropy)


def temperature_step(state: Temperature, entropy: float, target_entropy: float) -> float:
    """One Adam step on log alpha; returns the new alpha.

    Entropy above the target lowers alpha, below raises it.
    """
    g = temperature_gradient(entropy, target_entropy)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    state.log_alpha -= state.lr * m_hat / (math.sqrt(v_hat) + state.eps)
    return state.alpha
