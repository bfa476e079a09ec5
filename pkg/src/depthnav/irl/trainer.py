"""One-owner trainer: critic, autoencoder, actor and temperature updates plus target averaging."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .. import rng as _rng
from ..nn import Adam, Tape, load_checkpoint, polyak_update, save_checkpoint
from ..nn.autodiff import no_grad
from .config import TrainerConfig
from .losses import Temperature, actor_loss, critic_loss, rae_loss, temperature_step
from .networks import Agent, Obs, prepare_images

log = logging.getLogger(__name__)

METRIC_FIELDS = [
    "step", "critic_loss", "expert_reward", "learner_penalty", "value_nonterminal",
    "expert_terminal", "learner_terminal", "value_terminal", "rae_loss", "actor_loss",
    "entropy", "alpha", "q_mean", "q_min", "q_max", "q_raw_outside",
    "reward_expert", "reward_learner", "terminal_rows",
]


def generator_state(gen: np.random.Generator) -> dict:
    """JSON-safe snapshot of a generator's bit state."""
    def conv(x):
        if isinstance(x, np.ndarray):
            return {"__array__": x.tolist(), "dtype": str(x.dtype)}
        if isinstance(x, dict):
            return {k: conv(v) for k, v in x.items()}
        return x.item() if isinstance(x, np.generic) else x
    return conv(gen.bit_generator.state)


def restore_generator(gen: np.random.Generator, state: dict) -> None:
    def conv(x):
        if isinstance(x, dict) and "__array__" in x:
            return np.array(x["__array__"], dtype=x["dtype"])
        if isinstance(x, dict):
            return {k: conv(v) for k, v in x.items()}
        return x
    gen.bit_generator.state = conv(state)


class Trainer:
    def __init__(self, cfg: TrainerConfig = TrainerConfig()):
        self.cfg = cfg
        self.agent = Agent(cfg)
        self.gen = _rng.stream(cfg.seed, "trainer")
        a = self.agent
        self.critic_opt = Adam(a.critic.parameters(), cfg.critic_lr)
        self.encoder_opt = Adam(a.critic.encoder_parameters(), cfg.autoencoder_lr)
        self.decoder_opt = Adam(a.decoder.parameters(), cfg.autoencoder_lr)
        self.actor_opt = Adam(a.actor.parameters(), cfg.actor_lr)
        self.temperature = Temperature(float(np.log(cfg.init_temperature)), lr=cfg.temperature_lr,
                                       beta1=cfg.temperature_beta1)
        self.step = 0
        self.last_critic_diag: dict | None = None

    @property
    def alpha(self) -> float:
        return self.temperature.alpha

    def value_temperature(self) -> float:
        return self.alpha if self.cfg.value_uses_temperature else 1.0

    def _optimizers(self):
        return {"critic": self.critic_opt, "encoder": self.encoder_opt,
                "decoder": self.decoder_opt, "actor": self.actor_opt}

    def update_targets(self) -> None:
        a, cfg = self.agent, self.cfg
        polyak_update(a.target.encoder_parameters(), a.critic.encoder_parameters(), cfg.rho_enc)
        polyak_update(a.target.head_parameters(), a.critic.head_parameters(), cfg.rho_q)

    def train_step(self, expert_buffer, learner_buffer) -> dict | None:
        """One update of every component. Returns metrics, or None when a buffer is short."""
        cfg, a = self.cfg, self.agent
        if len(expert_buffer) < cfg.batch_size or len(learner_buffer) < cfg.batch_size:
            log.warning("buffer underflow (expert %d, learner %d, batch %d): skipping update",
                        len(expert_buffer), len(learner_buffer), cfg.batch_size)
            return None
        be = expert_buffer.sample(cfg.batch_size, self.gen)
        bl = learner_buffer.sample(cfg.batch_size, self.gen)

        tape = Tape()
        with tape:
            out = critic_loss(a.critic, a.target, a.actor, be, bl, cfg, self.gen, self.value_temperature())
        self.critic_opt.step(tape.backward(out.loss))
        self.last_critic_diag = out.diagnostics

        images = prepare_images(np.concatenate([be.obs.image, bl.obs.image]), cfg.input_pool)
        tape = Tape()
        with tape:
            rl, _ = rae_loss(a.critic.latent, a.decoder, images, cfg.lambda_z, cfg.lambda_theta)
        grads = tape.backward(rl)
        self.encoder_opt.step(grads)
        self.decoder_opt.step(grads)

        metrics_actor = (float("nan"), float("nan"))
        if self.step % cfg.actor_update_freq == 0:
            obs = Obs.concat(be.obs, bl.obs)
            tape = Tape()
            with tape:
                act = actor_loss(a.actor, a.critic, obs, self.alpha, self.gen)
            grads = tape.backward(act.loss)
            owned = {p.name for p in a.actor.parameters()}
            self.actor_opt.step({k: g for k, g in grads.items() if k in owned})
            temperature_step(self.temperature, act.entropy, cfg.target_entropy)
            metrics_actor = (float(act.loss.data), act.entropy)

        if self.step % cfg.critic_target_update_freq == 0:
            self.update_targets()
        self.step += 1

        d = out.diagnostics
        q = d["q"]
        rew, exp_mask = d["reward"], d["expert"]
        m = {
            "step": self.step,
            "critic_loss": float(out.loss.data),
            **out.terms,
            "rae_loss": float(rl.data),
            "actor_loss": metrics_actor[0],
            "entropy": metrics_actor[1],
            "alpha": self.alpha,
            "q_mean": float(q.mean()),
            "q_min": float(q.min()),
            "q_max": float(q.max()),
            "q_raw_outside": d["q_raw_outside"],
            "reward_expert": float(rew[exp_mask].mean()),
            "reward_learner": float(rew[~exp_mask].mean()),
            "terminal_rows": int(d["nu"].sum()),
        }
        return m

    # -- persistence ---------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = dict(self.agent.state_arrays())
        for name, opt in self._optimizers().items():
            arrays.update(opt.state_arrays(f"opt.{name}"))
        t = self.temperature
        arrays["temperature"] = np.array([t.log_alpha, t.m, t.v, t.t], dtype=float)
        arrays["trainer.step"] = np.array([self.step], dtype=float)
        return arrays

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"config": self.cfg.to_dict(), "config_hash": self.cfg.digest(),
                "rng": generator_state(self.gen), **(extra_meta or {})}
        save_checkpoint(path, self.state_arrays(), meta)

    def load_arrays(self, arrays: dict[str, np.ndarray], meta: dict) -> None:
        self.agent.load_state_arrays(arrays)
        for name, opt in self._optimizers().items():
            opt.load_state_arrays(f"opt.{name}", arrays)
        la, m, v, t = arrays["temperature"]
        self.temperature.log_alpha, self.temperature.m, self.temperature.v, self.temperature.t = la, m, v, int(t)
        self.step = int(arrays["trainer.step"][0])
        if "rng" in meta:
            restore_generator(self.gen, meta["rng"])

    @classmethod
    def from_checkpoint(cls, path, cfg: TrainerConfig | None = None) -> tuple["Trainer", dict]:
        arrays, meta = load_checkpoint(path)
        saved = meta.get("config_hash")
        if cfg is None:
            cfg = config_from_meta(meta)
        elif saved is not None and saved != cfg.digest():
            raise ValueError(f"checkpoint config hash {saved} does not match {cfg.digest()}: "
                             f"{config_diff(config_from_meta(meta), cfg)}")
        tr = cls(cfg)
        tr.load_arrays(arrays, meta)
        return tr, meta


def config_from_meta(meta: dict) -> TrainerConfig:
    d = dict(meta["config"])
    d["conv_strides"] = tuple(d["conv_strides"])
    return TrainerConfig(**d)


def config_diff(a: TrainerConfig, b: TrainerConfig) -> dict:
    da, db = a.to_dict(), b.to_dict()
    return {k: (da[k], db[k]) for k in da if da[k] != db[k]}


class MetricsLog:
    """Append-only CSV of per-step metrics with a fixed header."""

    def __init__(self, path, fields=None, append: bool = False):
        self.path = Path(path)
        self.fields = list(fields or METRIC_FIELDS)
        exists = self.path.exists() and append
        self._fh = open(self.path, "a" if exists else "w", newline="")
        self._w = csv.writer(self._fh)
        if not exists:
            self._w.writerow(self.fields)

    def write(self, row: dict) -> None:
        self._w.writerow([_fmt(row.get(k, "")) for k in self.fields])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def policy_action(trainer: Trainer, obs: Obs, deterministic: bool = True) -> np.ndarray:
    with no_grad():
        return trainer.agent.actor.act(obs, trainer.gen, deterministic=deterministic)
