"""``wiorbo`` command line.

Exit codes: 0 success, 1 bad config, 2 at least one trial diverged,
3 I/O failure while reading or writing files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import ConfigError
from .config import load_config
from .experiment import build_problem, fit_sampler_errors, resolve_out_dir, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("wiorbo")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wiorbo", description="Sampler comparisons for bilevel solvers.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="TOML experiment config")
        p.add_argument("--out-dir", help="output directory (overrides [output] dir and $WIORBO_OUT_DIR)")
        p.add_argument("--seed-offset", type=int, default=0, help="add K to every trial seed")

    run = sub.add_parser("run", help="run every (sampler, seed) trial and write traces plus summary.json")
    common(run)
    run.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    common(sub.add_parser("fit-errors", help="fit the averaged gradient error of each sampler; writes fit.json"))
    val = sub.add_parser("validate", help="check a config and build its problem instance")
    val.add_argument("config")
    return ap


def _load(args):
    config = load_config(args.config)
    if getattr(args, "seed_offset", 0):
        if min(config.seeds) + args.seed_offset < 0:
            raise ConfigError("--seed-offset makes a trial seed negative")
        config = config.with_seed_offset(args.seed_offset)
    if getattr(args, "out_dir", None):
        config = config.with_out_dir(args.out_dir)
    return config


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = _load(args)
        if args.command == "validate":
            oracle = build_problem(config)
            print(f"ok: {config.problem} (p={oracle.p}, d={oracle.d}, m={oracle.m}) with {config.algorithm}")
            return EXIT_OK
        if args.command == "fit-errors":
            result = fit_sampler_errors(config)
            for dataset, per in result.items():
                for name, fit in per.items():
                    print(f"{dataset:6s} {name:18s} alpha={fit['alpha_hat_median']:.3f} C={fit['C_hat_median']:.3g}")
            print(f"wrote {resolve_out_dir(config)}/fit.json")
            return EXIT_OK
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        result = run_experiment(config, jobs=args.jobs)
        print(json.dumps(result.summary.to_dict(), indent=2))
        for strategy, seed in result.diverged:
            log.error("trial %s seed %d diverged", strategy.value, seed)
        return result.exit_code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
