"""Command line entry point: ``covplan {train,eval,bench,sweep,contraction}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from covplan.harness import MODES, ConfigError, load_config, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _seed_list(text: str):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covplan", description=__doc__)
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=_seed_list, metavar="N[,N...]")
        p.add_argument("--map", metavar="PATH")
        p.add_argument("--noise", type=float, metavar="RHO")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--episodes", type=int, metavar="N")
        p.add_argument("--step-cap", type=int, metavar="N")
        p.add_argument("--method", choices=["rl", "hybrid", "zigzag", "ba_star"])
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(
            args.config, mode=args.mode, seeds=args.seed, map=args.map, noise=args.noise,
            out=args.out, episodes=args.episodes, step_cap=args.step_cap, method=args.method,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        record = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported through the exit code
        logging.getLogger("covplan").exception("run failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"out": cfg.out, "config_hash": record.config_hash}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
