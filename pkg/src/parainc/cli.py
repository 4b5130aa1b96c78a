"""Command-line entry point: one executable, one subcommand per experiment.

Exit codes: 0 when every check passes, 2 when a check fails, 1 on error.
"""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, ConfigError, default_config, parse_file
from .experiments import ExperimentError, run_experiment


def build_parser():
    parser = argparse.ArgumentParser(
        prog="parainc",
        description="Experiments on parabolic equations with piecewise-smooth "
                    "coefficients and touching inclusions.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="experiment config file (key = value)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for independent instances")
        p.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = parse_file(args.config)
            if cfg.experiment != args.command:
                print(f"error: config is for {cfg.experiment!r}, "
                      f"not {args.command!r}", file=sys.stderr)
                return 1
        else:
            cfg = default_config(args.command)
        out_dir = args.out or cfg.get("out", "out")
        result = run_experiment(cfg, out_dir=out_dir, threads=args.threads)
    except (ConfigError, ExperimentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # solver/geometry failures
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for check in result.checks:
        print(check.line())
    if args.verbose:
        for path in result.outputs:
            print(f"wrote {path}")
    return 0 if result.passed else 2


if __name__ == "__main__":
    sys.exit(main())
