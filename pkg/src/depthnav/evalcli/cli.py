"""Command line: ``depthnav {gen-data,train,eval,render}``.

Exit codes: 0 success, 2 configuration error, 3 runtime fault.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..irl.config import ConfigError
from ..world import DENSITY_PRESETS
from .runconfig import RunConfig, echo_config, load_run_config

log = logging.getLogger("depthnav")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _load(args) -> tuple[RunConfig, str | None]:
    if args.config is None:
        cfg, text = RunConfig(), None
    else:
        cfg = load_run_config(args.config)
        text = Path(args.config).read_text()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg, text


def cmd_gen_data(args) -> int:
    import dataclasses

    from ..expert import build_dataset, mean_speed

    cfg, text = _load(args)
    out = Path(args.out or cfg.run.dataset_dir)
    dcfg = cfg.dataset if args.seed is None else dataclasses.replace(cfg.dataset, seed=args.seed)
    echo_config(RunConfig(cfg.run, dcfg, cfg.trainer), out, text)
    records, stats = build_dataset(dcfg, out, progress=lambda m, n, r: log.info("map %d/%d: %d records", m, n, r))
    stats["mean_speed"] = mean_speed(records)
    print(json.dumps(stats, indent=1))
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import run_bc, run_training

    cfg, text = _load(args)
    out = Path(args.out or "run")
    echo_config(cfg, out, text)
    if args.method == "bc":
        _, history = run_bc(cfg, out)
        print(f"bc: {len(history)} epochs, final loss {history[-1]:.6f}")
        return EXIT_OK
    result = run_training(cfg, out, resume=args.resume)
    print(f"{result.status}: {result.episodes} episodes, {result.env_steps} env steps, "
          f"{result.updates} updates in {result.seconds:.1f} s")
    return EXIT_RUNTIME if result.status == "diverged" else EXIT_OK


def _pilot_factory(args, cfg: RunConfig):
    from .evaluate import expert_factory, load_policy, policy_factory, random_factory

    if args.checkpoint == "random":
        return random_factory(cfg.run.seed)
    if args.checkpoint == "expert":
        return expert_factory()
    policy = load_policy(args.checkpoint, cfg.trainer if args.config is not None else None)
    return policy_factory(policy, cfg.run.seed)


def cmd_eval(args) -> int:
    from .evaluate import run_eval, summarize

    cfg, text = _load(args)
    out = Path(args.out or "eval")
    echo_config(cfg, out, text)
    r = cfg.run
    report = run_eval(_pilot_factory(args, cfg), args.density or r.eval_density, args.trials or r.eval_trials,
                      r.seed, r.eval_extent, r.eval_course_length, r.eval_time_limit, out / "report.csv")
    print(summarize(report))
    return EXIT_OK


def cmd_render(args) -> int:
    from .evaluate import run_trial
    from .render import Trace, render_frames

    cfg, text = _load(args)
    out = Path(args.out or "frames")
    echo_config(cfg, out, text)
    r = cfg.run
    result, env = run_trial(_pilot_factory(args, cfg), args.density or r.eval_density, args.trial, r.seed,
                            r.eval_extent, r.eval_course_length, r.eval_time_limit, keep_env=True)
    frames = render_frames(Trace.from_env(env), env.world, out)
    print(f"{result.outcome}: MP {result.mission_progress:.1f}%, {len(frames)} frames in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="depthnav", description="Depth-image waypoint planner: data, training, evaluation and rendering")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="run configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("gen-data", help="generate the expert dataset")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train the inverse soft-Q agent or the BC baseline")
    common(sp)
    sp.add_argument("--method", choices=("irl", "bc"), default="irl")
    sp.add_argument("--resume", action="store_true")
    sp.set_defaults(func=cmd_train)

    for name, func, text in (("eval", cmd_eval, "run the evaluation protocol"),
                             ("render", cmd_render, "fly one trial and write top-down frames")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--checkpoint", required=True, help="policy file, or 'random' / 'expert'")
        sp.add_argument("--density", choices=sorted(DENSITY_PRESETS))
        if name == "eval":
            sp.add_argument("--trials", type=int)
        else:
            sp.add_argument("--trial", type=int, default=0)
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any fault maps to the runtime exit code
        log.debug("fault", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
