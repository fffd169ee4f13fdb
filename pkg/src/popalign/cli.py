"""Command-line entry point.

    popalign run <config> [--seed N] [--preset NAME] [--no-attack] [--jobs N] [--out DIR]
    popalign validate <config>

Exit codes: 0 ok, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import PRESETS, load_config
from .errors import ConfigurationError, PopAlignError
from .experiment import run_experiment, write_results

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="popalign", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("config", nargs="?", help="YAML config file (optional with --preset)")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--preset", choices=PRESETS, help="base preset the config file extends")
    run.add_argument("--no-attack", action="store_true", help="ignore the attack block")
    run.add_argument("--jobs", type=int, default=1, help="worker threads for client training")
    run.add_argument("--out", help="output directory (default: config output_dir)")
    run.add_argument("-v", "--verbose", action="store_true")

    val = sub.add_parser("validate", help="list every constraint violation in a config")
    val.add_argument("config")
    val.add_argument("--preset", choices=PRESETS)
    return p


def _report(violations: list[str]) -> None:
    print(f"{len(violations)} violation(s):", file=sys.stderr)
    for v in violations:
        print(f"  - {v}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.DEBUG, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "validate":
        try:
            _, violations = load_config(args.config, preset=args.preset)
        except OSError as exc:
            print(f"cannot read {args.config}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except ConfigurationError as exc:
            violations = [str(exc)]
        if violations:
            _report(violations)
            return EXIT_CONFIG
        print("ok: no violations")
        return EXIT_OK

    if args.config is None and args.preset is None:
        print("run needs a config file or --preset", file=sys.stderr)
        return EXIT_CONFIG
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.no_attack:
        overrides["attack"] = {"enabled": False}
    try:
        cfg, violations = load_config(args.config, preset=args.preset, overrides=overrides)
    except OSError as exc:
        print(f"cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        violations = [str(exc)]
    if violations:
        _report(violations)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        result = run_experiment(cfg, jobs=args.jobs)
        out = write_results(result, args.out or cfg.output_dir)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PopAlignError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    acc = result.series["main_accuracy"].values[-1]
    print(f"wrote {out} (final main accuracy {acc:.4f})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
