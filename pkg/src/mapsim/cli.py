"""Command line entry points: train, eval, bench.

Flag values override the config file, which overrides the chosen preset.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import experiments as xp


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument(
        "--preset",
        choices=["default", "smoke"],
        default="default",
        help="base config when no file is given",
    )
    parser.add_argument("--seed", type=int, metavar="N")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--policy", choices=xp.POLICIES, metavar="NAME")
    parser.add_argument(
        "--tau-c", metavar="LIST", help="comma-separated clustering periods"
    )
    parser.add_argument("--scenario", choices=xp.SCENARIOS, metavar="NAME")
    parser.add_argument("--deployments", type=int, metavar="N")
    parser.add_argument("--horizon", type=int, metavar="N")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mapsim",
        description="Mobile access point trajectory experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a learnable policy")
    _add_common(p_train)
    p_train.add_argument("--runs", type=int, metavar="N", help="training runs")

    p_eval = sub.add_parser("eval", help="evaluate one policy")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", metavar="PATH", help="weights to load")

    p_bench = sub.add_parser("bench", help="compare policies and tau_c values")
    _add_common(p_bench)
    return parser


def config_from_args(args) -> xp.ExperimentConfig:
    if args.config:
        config = xp.load_config(args.config)
    elif args.preset == "smoke":
        config = xp.smoke_config()
    else:
        config = xp.default_config()

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.policy is not None:
        overrides["policy"] = args.policy
    if args.scenario is not None:
        overrides["scenario"] = args.scenario
    if args.deployments is not None:
        overrides["num_deployments"] = args.deployments
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if args.tau_c is not None:
        overrides["tau_c_values"] = [int(v) for v in args.tau_c.split(",") if v]
    if getattr(args, "runs", None) is not None:
        overrides["training_runs"] = args.runs
    return replace(config, **overrides) if overrides else config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except (OSError, ValueError, TypeError) as exc:
        print("mapsim: bad configuration: %s" % exc, file=sys.stderr)
        return 2

    if args.command == "train":
        return xp.cmd_train(config)
    if args.command == "eval":
        return xp.cmd_eval(config, checkpoint=args.checkpoint)
    if args.command == "bench":
        return xp.cmd_bench(config)
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
