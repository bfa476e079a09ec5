"""Run configuration: ``[run]``, ``[dataset]`` and ``[trainer]`` sections of flat ``key = value`` lines."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..expert import DatasetConfig
from ..irl.config import ConfigError, TrainerConfig, config_from_kv, format_config
from ..world import DENSITY_PRESETS


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    dataset_dir: str = "dataset"
    # training loop
    episodes: int = 1_000_000
    max_env_steps: int = 10_000
    time_budget: float = 0.0  # seconds of wall time, 0 = unlimited
    train_course_length: float = 20.0
    train_time_limit: float = 15.0
    map_cycle: int = 5
    gain_randomization: float = 0.1
    checkpoint_every: int = 10  # episodes
    # evaluation protocol
    eval_density: str = "1/80"
    eval_trials: int = 10
    eval_course_length: float = 20.0
    eval_extent: float = 50.0
    eval_time_limit: float = 30.0
    bc_epochs: int = 30
    bc_lr: float = 1e-3
    bc_batch: int = 64

    def __post_init__(self):
        if self.eval_density not in DENSITY_PRESETS:
            raise ConfigError(f"eval_density must be one of {sorted(DENSITY_PRESETS)}, got {self.eval_density!r}")
        if self.map_cycle < 1 or self.eval_trials < 1 or self.checkpoint_every < 1:
            raise ConfigError("map_cycle, eval_trials and checkpoint_every must be positive")
        if not 0.0 <= self.gain_randomization <= 0.5:
            raise ConfigError("gain_randomization must lie in [0, 0.5]")


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    def with_seed(self, seed: int) -> "RunConfig":
        return RunConfig(dataclasses.replace(self.run, seed=seed), self.dataset,
                         self.trainer.with_overrides(seed=seed))


def _coerce(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"not a boolean: {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if isinstance(default, int):
        return int(raw.replace("_", ""))
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(_number(x) for x in raw.replace(",", " ").split())
    return raw


def _number(x: str):
    if "/" in x:
        num, den = x.split("/")
        return float(num) / float(den)
    return float(x)


def _apply(base, kv: dict, section: str):
    known = {f.name: getattr(base, f.name) for f in fields(base)}
    updates = {}
    for key, raw in kv.items():
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        try:
            updates[key] = _coerce(raw, known[key])
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None
    try:
        return dataclasses.replace(base, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_run_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                   strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    unknown = set(cp.sections()) - {"run", "dataset", "trainer"}
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}")
    cfg = RunConfig()
    run = _apply(cfg.run, dict(cp["run"]) if cp.has_section("run") else {}, "run")
    dataset = _apply(cfg.dataset, dict(cp["dataset"]) if cp.has_section("dataset") else {}, "dataset")
    trainer = config_from_kv(dict(cp["trainer"]) if cp.has_section("trainer") else {})
    return RunConfig(run, dataset, trainer)


def load_run_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_run_config(text)


def format_run_config(cfg: RunConfig) -> str:
    def section(obj):
        out = []
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out)

    return (f"[run]\n{section(cfg.run)}\n\n[dataset]\n{section(cfg.dataset)}\n\n"
            f"[trainer]\n{format_config(cfg.trainer)}")


def echo_config(cfg: RunConfig, out_dir, source_text: str | None = None) -> None:
    """Write the effective config, and the source file verbatim when there is one."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.effective.cfg").write_text(format_run_config(cfg))
    if source_text is not None:
        (out / "config.cfg").write_text(source_text)
