"""Command-line entry point: one subcommand per experiment task."""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .harness import PRESETS, TASKS, load_config, pretty_table, run_experiment
from .sim import InvalidInput

HELP = {
    "mv-offline": "batched episodic actor-critic on the mean-variance task",
    "mv-online": "per-step episodic actor-critic on the mean-variance task",
    "lq-ergodic": "ergodic actor-critic on the linear-quadratic task",
    "benchmark": "closed-form benchmarks and the brute-force LQ oracle",
    "gradcheck": "policy-gradient estimator against finite differences",
    "pe-check": "policy evaluation against a Monte-Carlo oracle",
}


def _param(s):
    """key=value with a JSON value when it parses, else a string."""
    if "=" not in s:
        raise argparse.ArgumentTypeError(f"expected key=value, got {s!r}")
    k, v = s.split("=", 1)
    try:
        return k, json.loads(v)
    except json.JSONDecodeError:
        return k, v


def build_parser():
    p = argparse.ArgumentParser(prog="ctac", description="Continuous-time actor-critic experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="task", required=True)
    for task in TASKS:
        s = sub.add_parser(task, help=HELP[task])
        s.add_argument("--config", help="JSON file with params/seed/reps")
        s.add_argument("--preset", choices=sorted(k for k, v in PRESETS.items() if v["task"] == task))
        s.add_argument("--seed", type=int)
        s.add_argument("--reps", type=int, help="number of repetitions")
        s.add_argument("--out", help="output directory for metrics.csv, traces.csv, manifest.json")
        s.add_argument("--workers", type=int, help="worker processes for repetitions")
        s.add_argument("--set", dest="overrides", type=_param, action="append", default=[],
                       metavar="KEY=VALUE", help="override one parameter (JSON value)")
        s.add_argument("--quiet", action="store_true", help="do not print the summary table")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.task, args.preset, args.config, args.seed, args.reps, args.workers, args.out,
                          dict(args.overrides))
        res = run_experiment(cfg)
    except InvalidInput as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if not args.quiet:
        sys.stdout.write(pretty_table(res))
        if cfg.out:
            print(f"wrote {cfg.out}/metrics.csv, traces.csv, summary.csv, manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
