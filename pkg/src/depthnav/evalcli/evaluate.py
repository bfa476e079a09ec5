"""Evaluation protocol: fresh tree maps, hover starts, mission progress and speed per trial."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .. import rng as _rng
from ..irl.config import TrainerConfig
from ..irl.networks import Obs, PolicyNet, conv_stack
from ..irl.trainer import Trainer, config_diff, config_from_meta
from ..nn import load_checkpoint, no_grad, save_checkpoint
from ..vehicle import Terminal
from ..world import DENSITY_PRESETS, generate_map, sample_start_goal
from .env import ExpertPilot, FlightEnv, random_action

log = logging.getLogger(__name__)

OUTCOMES = {Terminal.GOAL: "success", Terminal.COLLISION: "collision", Terminal.TIMEOUT: "timeout"}
REPORT_FIELDS = ["density", "trial", "map_seed", "outcome", "mission_progress", "avg_speed",
                 "flight_time", "path_length", "actions"]


def mission_progress(path, start, goal) -> float:
    """Percent of the start-goal distance covered along the goal direction (best point of the path)."""
    path = np.asarray(path, float).reshape(-1, 3)
    if len(path) == 0:
        raise ValueError("path must be non-empty")
    start, goal = np.asarray(start, float), np.asarray(goal, float)
    span = float(np.linalg.norm(goal - start))
    if span == 0.0:
        raise ValueError("start and goal coincide")
    u = (goal - start) / span
    best = float(np.max((path - start) @ u))
    return 100.0 * min(max(best, 0.0), span) / span


def path_length(path) -> float:
    path = np.asarray(path, float)
    return float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1))) if len(path) > 1 else 0.0


@dataclass
class TrialResult:
    density: str
    trial: int
    map_seed: int
    outcome: str
    mission_progress: float
    avg_speed: float
    flight_time: float
    path_length: float
    actions: int


@dataclass
class EvalReport:
    trials: list

    def aggregates(self) -> dict:
        """Per-density summary, recomputed from the trial rows every time."""
        out = {}
        for density in sorted({t.density for t in self.trials}):
            rows = [t for t in self.trials if t.density == density]
            n_ok = sum(t.outcome == "success" for t in rows)
            out[density] = {
                "trials": len(rows),
                "successes": n_ok,
                "success_rate": n_ok / len(rows),
                "mission_progress": float(np.mean([t.mission_progress for t in rows])),
                "avg_speed": float(np.mean([t.avg_speed for t in rows])),
            }
        return out

    def mean_progress(self) -> float:
        return float(np.mean([t.mission_progress for t in self.trials]))

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_FIELDS)
            for t in self.trials:
                w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(t).values()])

    @classmethod
    def read(cls, path) -> "EvalReport":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        trials = [TrialResult(r["density"], int(r["trial"]), int(r["map_seed"]), r["outcome"],
                              float(r["mission_progress"]), float(r["avg_speed"]), float(r["flight_time"]),
                              float(r["path_length"]), int(r["actions"])) for r in rows]
        return cls(trials)


# -- pilots: (obs, state) -> raw (10, 2) action ----------------------------------


class PolicyPilot:
    def __init__(self, policy: PolicyNet, deterministic: bool = True, seed: int = 0):
        self.policy = policy
        self.deterministic = deterministic
        self.gen = _rng.stream(seed, "pilot")

    def __call__(self, obs: Obs, state) -> np.ndarray:
        with no_grad():
            a = self.policy.act(Obs.single(*obs) if obs.image.ndim == 2 else obs, self.gen, self.deterministic)
        return np.asarray(a, float).reshape(-1, 2)


class RandomPilot:
    def __init__(self, seed: int = 0):
        self.gen = _rng.stream(seed, "random-pilot")

    def __call__(self, obs, state) -> np.ndarray:
        return random_action(self.gen)


# -- policy files --------------------------------------------------------------------


def save_bc_policy(policy: PolicyNet, cfg: TrainerConfig, path, extra_meta: dict | None = None) -> None:
    arrays = {p.name: p.data for p in policy.parameters()}
    meta = {"kind": "bc", "config": cfg.to_dict(), "config_hash": cfg.digest(), **(extra_meta or {})}
    save_checkpoint(path, arrays, meta)


def load_policy(path, cfg: TrainerConfig | None = None) -> PolicyNet:
    """The actor of a trainer checkpoint or a behaviour-cloning policy file.

    With ``cfg`` given, a config hash mismatch is refused with the differing keys.
    """
    arrays, meta = load_checkpoint(path)
    saved = config_from_meta(meta)
    if cfg is not None and meta.get("config_hash") != cfg.digest():
        raise ValueError(f"checkpoint config hash {meta.get('config_hash')} does not match {cfg.digest()}: "
                         f"{config_diff(saved, cfg)}")
    if meta.get("kind") == "bc":
        policy = PolicyNet(saved, conv_stack(saved, "bc.conv", 0), "bc", 0, block_encoder=False)
        for p in policy.parameters():
            p.data[...] = arrays[p.name]
        return policy
    trainer = Trainer(saved)
    trainer.load_arrays(arrays, meta)
    return trainer.agent.actor


# -- protocol ------------------------------------------------------------------------


def trial_world(density: str, trial: int, seed: int, extent: float, course_length: float):
    map_seed = _rng.derive_seed(seed, "eval-map", density, trial)
    world = generate_map(DENSITY_PRESETS[density], (extent, extent), map_seed, kinds="trees")
    start, goal = sample_start_goal(world, _rng.derive_seed(seed, "eval-sg", density, trial),
                                    course_length=course_length, lateral_range=extent / 2 - 5.0)
    return map_seed, world, start, goal


def run_trial(pilot_factory, density: str, trial: int, seed: int, extent: float = 50.0,
              course_length: float = 20.0, time_limit: float = 30.0, keep_env: bool = False):
    """Fly one trial; ``pilot_factory(world, start, goal)`` builds the pilot for this map."""
    map_seed, world, start, goal = trial_world(density, trial, seed, extent, course_length)
    env = FlightEnv(world, start, goal, seed=_rng.derive_seed(seed, "eval-env", density, trial),
                    time_limit=time_limit)
    pilot = pilot_factory(world, start, goal)
    obs = env.observe()
    while not env.done:
        obs, _, _ = env.step(pilot(obs, env.state))
    outcome = OUTCOMES[env.terminal]
    mp = 100.0 if outcome == "success" else mission_progress(env.path, start, goal)
    length = path_length(env.path)
    t_flight = env.times[-1] - env.times[0]
    result = TrialResult(density, trial, map_seed, outcome, mp, length / t_flight if t_flight > 0 else 0.0,
                         t_flight, length, env.n_actions)
    return (result, env) if keep_env else result


def run_eval(pilot_factory, density: str = "1/80", trials: int = 10, seed: int = 0, extent: float = 50.0,
             course_length: float = 20.0, time_limit: float = 30.0, out_path=None) -> EvalReport:
    if density not in DENSITY_PRESETS:
        raise ValueError(f"unknown density preset {density!r}")
    results = []
    for k in range(trials):
        r = run_trial(pilot_factory, density, k, seed, extent, course_length, time_limit)
        log.info("trial %d: %s MP %.1f%% speed %.2f m/s", k, r.outcome, r.mission_progress, r.avg_speed)
        results.append(r)
    report = EvalReport(results)
    if out_path is not None:
        report.write(out_path)
    return report


def policy_factory(policy: PolicyNet, seed: int = 0, deterministic: bool = True):
    return lambda world, start, goal: PolicyPilot(policy, deterministic, seed)


def random_factory(seed: int = 0):
    counter = iter(range(1 << 30))
    return lambda world, start, goal: RandomPilot(_rng.derive_seed(seed, "random", next(counter)))


def expert_factory():
    return lambda world, start, goal: ExpertPilot(world, start, goal)


def summarize(report: EvalReport) -> str:
    lines = []
    for density, agg in report.aggregates().items():
        lines.append(f"density {density}: success {agg['successes']}/{agg['trials']} "
                     f"MP {agg['mission_progress']:.1f}% speed {agg['avg_speed']:.2f} m/s")
    return "\n".join(lines)
