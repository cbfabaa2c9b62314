"""Command-line front door.

Subcommands: tabular, train, eval, grad-accuracy, snr, theorem2, expert-gen.
Exit codes: 0 success, 2 configuration error, 3 numerical failure
(non-finite parameters).
"""

import argparse
import json
import logging
import sys

import numpy as np

from arcil import envs
from arcil.agents import evaluate_policy
from arcil.config import ConfigError, parse_config
from arcil.harness import TRAIN_TASKS, run_experiment
from arcil.nets import NonFiniteError
from arcil.policy import SquashedGaussianPolicy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_TASK_FOR_COMMAND = {
    "tabular": ("gridworld_pi",),
    "train": tuple(TRAIN_TASKS),
    "grad-accuracy": ("grad_accuracy",),
    "snr": ("snr",),
    "theorem2": ("theorem2",),
}


def _add_config_flags(parser):
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config's first seed")


def _load(args, command):
    config = parse_config(args.config)
    allowed = _TASK_FOR_COMMAND[command]
    if config.task not in allowed:
        raise ConfigError(
            f"field 'task': {config.task!r} not valid for '{command}' "
            f"(expected one of {list(allowed)})")
    if args.seed is not None:
        config.seeds = [args.seed] + list(config.seeds[1:])
    return config


def _cmd_run(args, command):
    config = _load(args, command)
    records = run_experiment(config, out_dir=args.out)
    for record in records:
        if record.rows:
            last = record.rows[-1]
            print(f"seed {record.seed}: eval_step={last.eval_step} "
                  f"mean_return={last.mean_return:.6g} std={last.std_return:.6g}")
        elif record.extra:
            print(f"seed {record.seed}: " + json.dumps(record.extra, sort_keys=True))
    if args.out is not None:
        print(f"artifacts: {args.out}/{config.config_hash()}")
    return EXIT_OK


def _cmd_eval(args):
    policy = SquashedGaussianPolicy.load(args.checkpoint)
    env = envs.make_env(args.env, noise_std=args.noise_std) \
        if args.env in ("reach", "push") else envs.make_env(args.env)
    mean, std = evaluate_policy(policy, env, args.episodes, args.seed)
    print(f"mean_return={mean:.6g} std_return={std:.6g} episodes={args.episodes}")
    return EXIT_OK


def _cmd_expert_gen(args):
    trajs = envs.generate_expert_dataset(args.env, args.n, seed=args.seed)
    envs.save_trajectories(args.out, trajs)
    returns = [t.episode_return for t in trajs]
    print(f"wrote {sum(len(t) for t in trajs)} transitions from {args.n} "
          f"trajectories to {args.out} (mean return {np.mean(returns):.4f})")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="arcil",
        description="Adversarial imitation learning with residual critics")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("tabular", "train", "grad-accuracy", "snr", "theorem2"):
        p = sub.add_parser(name)
        _add_config_flags(p)

    p_eval = sub.add_parser("eval", help="evaluate a saved policy checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--env", required=True, choices=("reach", "push", "car1d"))
    p_eval.add_argument("--episodes", type=int, default=20)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--noise-std", type=float, default=1e-4)

    p_gen = sub.add_parser("expert-gen", help="write scripted-expert trajectories")
    p_gen.add_argument("--env", required=True, choices=("reach", "push", "car1d"))
    p_gen.add_argument("--n", type=int, default=64)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True, help="output CSV path")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(name)s: %(message)s")
    try:
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "expert-gen":
            return _cmd_expert_gen(args)
        return _cmd_run(args, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
