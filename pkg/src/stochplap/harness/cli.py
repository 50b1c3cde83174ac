"""Command line entry point: ``stochplap <subcommand> [--config PATH] ...``.

Exit codes: 0 all checks passed, 1 a check failed (or a solve broke down),
2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import jsonschema

from ..field import ParameterError
from ..proximal import NumericError
from .config import ConfigError, load_config
from .experiments import run_decay, run_ergodic, run_local_limit, run_measure_limit, run_simulate
from .report import to_json, write_report
from .selftest import run_selftest

__all__ = ["main", "build_parser"]

logger = logging.getLogger("stochplap")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
COMMANDS = ("simulate", "decay", "ergodic", "local-limit", "measure-limit", "selftest")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _threads(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("threads must be >= 0 (0 = all cores)")
    return value


def _add_common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default, help="YAML config document")
    parser.add_argument("--out", metavar="DIR", default=default, help="output directory")
    parser.add_argument("--seed", type=_u64, metavar="U64", default=default, help="override the config seed")
    parser.add_argument("--threads", type=_threads, metavar="N", default=argparse.SUPPRESS if suppress else 1,
                        help="worker processes (0 = all cores)")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochplap",
        description="Simulate stochastic nonlocal/local singular p-Laplace equations and run checks.",
    )
    _add_common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    helps = {
        "simulate": "run one trajectory and write diagnostics",
        "decay": "noise-free decay statistic t*||u_t||^2 / ||x0||^m0",
        "ergodic": "two-start ergodicity, contraction and energy-mass checks",
        "local-limit": "nonlocal -> local convergence of paths along the epsilon ladder",
        "measure-limit": "nonlocal -> local convergence of invariant measures",
        "selftest": "fast consistency checks of the numerical core",
    }
    for name in COMMANDS:
        _add_common(sub.add_parser(name, help=helps[name]), suppress=True)
    return parser


def _run(args) -> dict:
    cfg = load_config(args.config, seed=args.seed)
    logger.info("p=%g  m0=%g  m1=%g  (derived)", cfg.p, cfg.m0, cfg.m1)
    out = args.out
    if args.command == "simulate":
        return run_simulate(cfg, out_dir=out)
    if args.command == "decay":
        return run_decay(cfg)
    if args.command == "ergodic":
        return run_ergodic(cfg, threads=args.threads, out_dir=out)
    if args.command == "local-limit":
        return run_local_limit(cfg, threads=args.threads)
    if args.command == "measure-limit":
        return run_measure_limit(cfg, threads=args.threads)
    return run_selftest(cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        report = _run(args)
    except (ConfigError, ParameterError) as exc:
        print(f"stochplap: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"stochplap: numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    try:
        if args.out:
            path = write_report(report, Path(args.out) / f"{report['experiment']}.json")
            print(f"report written to {path}", file=sys.stderr)
        else:
            print(to_json(report))
    except jsonschema.ValidationError as exc:
        print(f"stochplap: report failed schema validation: {exc.message}", file=sys.stderr)
        return EXIT_FAIL
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: value={c['value']} threshold={c['threshold']}",
              file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
