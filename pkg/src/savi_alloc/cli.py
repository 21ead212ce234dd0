"""``savi-alloc <suite> --config <path> [overrides]``.

Exit status: 0 on success, 1 for configuration errors, 2 for numerical
failures (divergence, exhausted evaluation budget, degenerate Jacobians).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigInvalid, NumericalError
from .harness import SUITES, ExperimentConfig, run_suite

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


def _window(text):
    return text if text == "full" else int(text)


def _rate(text):
    return text if text == "auto" else float(text)


def build_parser():
    p = argparse.ArgumentParser(
        prog="savi-alloc",
        description="Run SAVI / bit-allocation experiment suites on surrogate GoP models.",
    )
    p.add_argument("suite", nargs="?", choices=SUITES, help="experiment suite to run")
    p.add_argument("--suite", dest="suite_flag", choices=SUITES, help="alternative to the positional suite")
    p.add_argument("--config", required=True, help="JSON config file (flat keys)")
    p.add_argument("--steps", type=int, help="gradient ascent steps K")
    p.add_argument("--learning-rate", type=_rate, help="step size alpha, or 'auto'")
    p.add_argument("--window", type=_window, help="window C (integer or 'full')")
    p.add_argument("--variant", help="SAVI variant used by single-variant suites")
    p.add_argument("--seed", type=int, action="append", help="seed to run (repeatable)")
    p.add_argument("--out", help="output prefix; writes <out>.csv and <out>.json")
    p.add_argument("-v", "--verbose", action="store_true", help="log one line per run")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    suite = args.suite or args.suite_flag
    if args.suite and args.suite_flag and args.suite != args.suite_flag:
        print("error: positional suite and --suite disagree", file=sys.stderr)
        return EXIT_CONFIG
    overrides = {
        "suite": suite,
        "steps": args.steps,
        "learning_rate": args.learning_rate,
        "window": args.window,
        "variant": args.variant,
        "seeds": args.seed,
        "output_path": args.out,
    }
    try:
        cfg = ExperimentConfig.from_file(args.config, **overrides)
        rows = run_suite(cfg)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{cfg.suite}: {len(rows)} rows" + (f" -> {cfg.output_path}.csv" if cfg.output_path else ""))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
