"""Command-line entry points.

    gsgat train  --config FILE [--jobs N] [--out DIR]
    gsgat verify [--level fast|full] [--work-dir DIR]
    gsgat plot   --in DIR [--out DIR]
    gsgat eval   --checkpoint FILE --episodes N [--seed N] [--epsilon X]

Exit codes: 0 success, 1 run failure, 2 configuration error, 3 verification
failure. GSGAT_OUTPUT_ROOT prefixes relative output directories.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_VERIFY_FAILURE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gsgat",
        description="Gumbel-Sinkhorn graph attention Q-learning harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the algorithm x seed matrix")
    p_train.add_argument("--config", required=True, help="experiment file")
    p_train.add_argument("--jobs", type=int, default=1,
                         help="parallel runs (default 1)")
    p_train.add_argument("--out", default=None,
                         help="output directory (overrides run.output_dir)")

    p_verify = sub.add_parser("verify", help="run the property/oracle suites")
    p_verify.add_argument("--level", choices=("fast", "full"), default="fast")
    p_verify.add_argument("--work-dir", default=None,
                          help="keep run artifacts here instead of temp dirs")

    p_plot = sub.add_parser("plot", help="render figures from metrics CSVs")
    p_plot.add_argument("--in", dest="in_dir", required=True,
                        help="directory containing metrics.csv files")
    p_plot.add_argument("--out", default=None, help="figure output directory")

    p_eval = sub.add_parser("eval", help="greedy rollouts from a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=20)
    p_eval.add_argument("--seed", type=int, default=1000)
    p_eval.add_argument("--epsilon", type=float, default=0.0)
    return parser


def _cmd_train(args) -> int:
    from .config import ConfigError, load_config, output_root
    from .harness import run_matrix
    try:
        cfg = load_config(args.config)
        root = output_root(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    if args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    return EXIT_RUN_FAILURE if run_matrix(cfg, root, jobs=args.jobs) else EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import verify_suite
    work_dir = Path(args.work_dir) if args.work_dir else None
    if work_dir:
        work_dir.mkdir(parents=True, exist_ok=True)
    return verify_suite(args.level, work_dir=work_dir)


def _cmd_plot(args) -> int:
    from .plots import emit_plots
    in_dir = Path(args.in_dir)
    if not in_dir.exists():
        print(f"config error: no such directory {in_dir}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    written = emit_plots(in_dir, args.out)
    for p in written:
        print(f"figure: {p}")
    return EXIT_OK if written else EXIT_RUN_FAILURE


def _cmd_eval(args) -> int:
    from . import gridworld as gw
    from .autodiff import ContractError
    from .training import TrainConfig, evaluate_policy, load_checkpoint, \
        restore_networks
    try:
        header, params = load_checkpoint(args.checkpoint)
    except (OSError, ContractError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    snapshot = header.get("extra", {}).get("config", {})
    if not snapshot:
        print("config error: checkpoint carries no config snapshot",
              file=sys.stderr)
        return EXIT_CONFIG_ERROR
    env_cfg = gw.EnvConfig(**snapshot["env"])
    train_cfg = TrainConfig(**snapshot["train"])
    nets = restore_networks(header, params, env_cfg, train_cfg)
    records = evaluate_policy(env_cfg, train_cfg, header["algorithm"], nets,
                              episodes=args.episodes, seed=args.seed,
                              epsilon=args.epsilon)
    rewards = [r.mean_reward for r in records]
    for r in records:
        line = (f"episode {r.episode}: meanReward {r.mean_reward:.4f} "
                f"live {r.live} death {r.death}")
        if env_cfg.scenario == gw.BATTLE:
            line += f" kill {r.kill}"
        print(line)
    print(f"{header['algorithm']} over {len(records)} episodes: "
          f"mean {np.mean(rewards):.4f} min {np.min(rewards):.4f} "
          f"max {np.max(rewards):.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "verify": _cmd_verify,
        "plot": _cmd_plot,
        "eval": _cmd_eval,
    }
    return handlers[args.command](args)


def entry() -> None:  # console_scripts hook
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
