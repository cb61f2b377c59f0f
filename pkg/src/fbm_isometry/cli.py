"""Command-line driver: ``fbm-isometry <study> [--config PATH] [--seed N] [--workers N] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .experiments import STUDIES, ConfigError, ExperimentConfig, run_study

log = logging.getLogger("fbm_isometry")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbm-isometry", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="study", required=True)
    for name in STUDIES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file with [study], [quadrature] and [output] sections")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--workers", type=int, default=1, help="cap on inner parallelism")
        p.add_argument("--out", help="output directory (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = ExperimentConfig.from_ini(args.config, args.study, args.seed, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.workers < 1:
        print("config error: --workers must be positive", file=sys.stderr)
        return 2
    start = time.perf_counter()
    try:
        report = run_study(cfg, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    log.info("%s finished in %.1fs", cfg.study, time.perf_counter() - start)
    for label, ok in report.checks:
        print(f"{'PASS' if ok else 'FAIL'}  {label}")
    print(f"{cfg.study}: {'PASS' if report.passed else 'FAIL'} -> {cfg.output_dir if not args.out else args.out}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
