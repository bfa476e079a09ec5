"""Episode loop feeding the inverse soft-Q trainer, plus the behaviour-cloning baseline run."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import rng as _rng
from ..expert import DatasetConfig, perturb_start, read_dataset, training_map
from ..irl.bc import bc_train
from ..irl.buffer import ReplayBuffer, expert_transitions
from ..irl.losses import inverse_reward
from ..irl.networks import Obs
from ..irl.trainer import METRIC_FIELDS, MetricsLog, Trainer
from ..nn import no_grad
from ..vehicle import ControllerGains, DroneState, randomize_gains
from ..world import sample_start_goal
from .env import FlightEnv, random_action
from .evaluate import save_bc_policy
from .runconfig import RunConfig

log = logging.getLogger(__name__)

TRAIN_FIELDS = ["episode", "env_step", *METRIC_FIELDS]
CHECKPOINT = "checkpoint.bin"
LEARNER_BUFFER = "learner_buffer.npz"


@dataclass
class TrainingResult:
    status: str  # "completed", "budget", "diverged"
    episodes: int
    env_steps: int
    updates: int
    seconds: float
    checkpoint: Path | None
    reward_gap: float | None = None


def map_for_episode(cfg: RunConfig, episode: int, cache: dict):
    """Training maps are replaced every ``map_cycle`` episodes."""
    index = episode // cfg.run.map_cycle
    if index not in cache:
        cache.clear()
        mcfg = DatasetConfig(seed=_rng.derive_seed(cfg.run.seed, "learner-maps"), extent=cfg.dataset.extent,
                             densities=cfg.dataset.densities)
        cache[index] = training_map(mcfg, index)
    return index, cache[index]


def episode_env(cfg: RunConfig, episode: int, cache: dict) -> tuple[int, FlightEnv]:
    seed = cfg.run.seed
    index, world = map_for_episode(cfg, episode, cache)
    start, goal = sample_start_goal(world, _rng.derive_seed(seed, "train-sg", episode),
                                    course_length=cfg.run.train_course_length,
                                    lateral_range=world.extent[1] / 2 - 5.0)
    state = perturb_start(DroneState.hover(start), cfg.dataset.perturb_angle,
                          _rng.derive_seed(seed, "train-perturb", episode))
    gains = randomize_gains(ControllerGains(), cfg.run.gain_randomization, _rng.derive_seed(seed, "gains", episode))
    env = FlightEnv(world, start, goal, seed=_rng.derive_seed(seed, "train-env", episode), gains=gains,
                    time_limit=cfg.run.train_time_limit, start_state=state)
    return index, env


def load_expert_buffer(cfg: RunConfig, records=None):
    if records is None:
        records, _ = read_dataset(cfg.run.dataset_dir)
    return expert_transitions(records, capacity=len(records))


def reward_gap(trainer: Trainer, expert_buffer, learner_buffer, n: int = 512) -> tuple[float, float]:
    """Mean implicit reward on expert and learner transitions under the current critic."""
    gen = _rng.stream(trainer.cfg.seed, "reward-probe")
    out = []
    for buf in (expert_buffer, learner_buffer):
        idx = gen.choice(len(buf), size=min(n, len(buf)), replace=False)
        batch = buf.take(np.sort(idx))
        a = trainer.agent
        out.append(float(np.mean(inverse_reward(a.critic, a.target, a.actor, batch, trainer.cfg, gen,
                                                trainer.value_temperature()))))
    return out[0], out[1]


def _finite_metrics(m: dict) -> bool:
    return all(math.isfinite(v) for k, v in m.items() if isinstance(v, float) and k not in ("actor_loss", "entropy"))


def run_training(cfg: RunConfig, out_dir, records=None, resume: bool = False, expert_buffer=None) -> TrainingResult:
    """Collect learner experience and update the trainer once per environment step.

    Checkpoints (trainer, learner buffer and loop counters) are written at
    episode boundaries, so a resumed run replays the same metrics trace.
    A non-finite loss stops the run and leaves the last good checkpoint.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    eb = expert_buffer if expert_buffer is not None else load_expert_buffer(cfg, records)
    ck = out / CHECKPOINT
    if resume and ck.exists():
        trainer, meta = Trainer.from_checkpoint(ck, cfg.trainer)
        episode, env_steps = int(meta["episode"]), int(meta["env_steps"])
        lb = ReplayBuffer.load(out / LEARNER_BUFFER)
        log.info("resumed at episode %d, env step %d", episode, env_steps)
    else:
        trainer = Trainer(cfg.trainer)
        episode, env_steps = 0, 0
        lb = ReplayBuffer(cfg.trainer.buffer_capacity)
    batch = cfg.trainer.batch_size
    if len(eb) < batch:
        raise ValueError(f"expert buffer holds {len(eb)} transitions, fewer than the batch size {batch}")
    cache: dict = {}
    status = "completed"
    budget = cfg.run.time_budget

    def save():
        trainer.save(ck, {"episode": episode, "env_steps": env_steps})
        lb.save(out / LEARNER_BUFFER)

    with MetricsLog(out / "metrics.csv", TRAIN_FIELDS, append=resume and ck.exists()) as metrics:
        while episode < cfg.run.episodes and env_steps < cfg.run.max_env_steps and status == "completed":
            map_index, env = episode_env(cfg, episode, cache)
            explore = _rng.stream(cfg.run.seed, "explore", episode)
            obs = env.observe()
            while not env.done:
                if env_steps < cfg.trainer.random_initial_actions:
                    action = random_action(explore)
                else:
                    with no_grad():
                        action = trainer.agent.actor.act(Obs.single(*obs), trainer.gen, deterministic=False)
                action = np.asarray(action, float).reshape(-1)
                next_obs, code, _ = env.step(action)
                lb.add(obs, action, next_obs, code, expert=False)
                obs = next_obs
                env_steps += 1
                if len(lb) >= batch:
                    try:
                        m = trainer.train_step(eb, lb)
                    except FloatingPointError as exc:
                        log.error("training diverged at update %d: %s", trainer.step, exc)
                        status = "diverged"
                        break
                    if not _finite_metrics(m):
                        log.error("non-finite metrics at update %d", trainer.step)
                        status = "diverged"
                        break
                    metrics.write({"episode": episode, "env_step": env_steps, **m})
                if env_steps >= cfg.run.max_env_steps or (budget and time.perf_counter() - t0 > budget):
                    break
            if status != "completed":
                break
            if env.done:
                log.info("episode %d map %d: %s after %d actions", episode, map_index, env.terminal.value,
                         env.n_actions)
                episode += 1
                if episode % cfg.run.checkpoint_every == 0:
                    save()
            if budget and time.perf_counter() - t0 > budget:
                status = "budget"
    if status == "completed" or status == "budget":
        if env_steps and (episode % cfg.run.checkpoint_every != 0 or not ck.exists()):
            save()
    gap = None
    if status != "diverged" and len(lb) > 0:
        r_e, r_l = reward_gap(trainer, eb, lb)
        gap = r_e - r_l
        (out / "reward_gap.json").write_text(json.dumps({"expert": r_e, "learner": r_l, "gap": gap}))
    return TrainingResult(status, episode, env_steps, trainer.step, time.perf_counter() - t0,
                          ck if ck.exists() else None, gap)


def run_bc(cfg: RunConfig, out_dir, records=None, time_budget: float | None = None):
    """Train the behaviour-cloning baseline on the expert records and save it."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if records is None:
        records, _ = read_dataset(cfg.run.dataset_dir)
    r = cfg.run
    policy, history = bc_train(records, cfg.trainer, epochs=r.bc_epochs, lr=r.bc_lr, batch_size=r.bc_batch,
                               seed=r.seed, time_budget=time_budget)
    save_bc_policy(policy, cfg.trainer, out / "bc_policy.bin", {"history": history})
    with open(out / "bc_loss.csv", "w") as fh:
        fh.write("epoch,loss\n")
        fh.writelines(f"{i},{v!r}\n" for i, v in enumerate(history))
    return policy, history
