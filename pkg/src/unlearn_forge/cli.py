"""Command-line entry point: ``unlearn-forge <command> [options]``.

Exit status: 0 on success, 2 for invalid configs, inputs or missing
artifacts, 3 for runtime failures such as a diverging loss.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .config import load_config
from .errors import ArtifactNotFoundError, InvalidInputError
from .unlearn import METHODS

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
COMMANDS = ("train", "unlearn", "attack", "report", "landscape", "run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unlearn-forge", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", metavar="PATH", help="TOML experiment config (defaults if omitted)")
    parser.add_argument("--seed", type=int, metavar="N", help="override experiment.master_seed")
    parser.add_argument("--out", metavar="DIR", help="override experiment.output_dir")
    parser.add_argument("--method", metavar="NAME", help="restrict to one unlearning method (or 'original')")
    parser.add_argument("--attack", metavar="NAME", help="restrict to one attack")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def _check_choice(value, allowed, flag):
    if value is not None and value not in allowed:
        raise InvalidInputError(f"{flag}: {value!r} is not one of {sorted(allowed)}")


def run(args: argparse.Namespace) -> None:
    if args.command == "report" and args.config is None:
        if args.out is None:
            raise InvalidInputError("report needs --out DIR or --config PATH")
        summary = harness.cmd_report(args.out)
        print(summary / "summary.txt")
        return
    cfg = load_config(args.config, master_seed=args.seed, output_dir=args.out)
    victims = set(cfg.methods) | ({harness.ORIGINAL} if args.command in ("attack", "landscape") else set())
    if args.method is not None:
        _check_choice(args.method, set(METHODS) | {harness.ORIGINAL}, "--method")
        _check_choice(args.method, victims, "--method")
    _check_choice(args.attack, set(cfg.attacks), "--attack")
    out = cfg.output_dir
    if args.command == "train":
        result = harness.cmd_train(cfg)
    elif args.command == "unlearn":
        result = harness.cmd_unlearn(cfg, args.method)
    elif args.command == "attack":
        result = harness.cmd_attack(cfg, args.attack, args.method)
    elif args.command == "landscape":
        result = harness.cmd_landscape(cfg, args.method)
    elif args.command == "report":
        result = harness.cmd_report(out, cfg) / "summary.txt"
    else:
        result = harness.cmd_run(cfg) / "summary.txt"
    print(result)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except (InvalidInputError, ArtifactNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # divergence, consistency failures, anything unexpected
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
