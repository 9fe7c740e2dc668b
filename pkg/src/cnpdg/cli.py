"""Command-line entry point.

Usage: cnpdg {mms|reactor|solvecheck} --config FILE --out DIR
       [--threads N] [--deterministic]

The config file is YAML mirroring the RunConfig tree; unknown keys are
rejected before any computation.  Exit codes: 0 success, 2 configuration
error, 3 solver failure, 4 I/O error while writing outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import yaml

from .experiments import (
    ConfigError,
    RunConfig,
    run_mms,
    run_reactor,
    run_solvecheck,
)
from .nonlinear import NonlinearSolveError
from .solvers import LinearSolveFailure

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

_RUNNERS = {"mms": run_mms, "reactor": run_reactor, "solvecheck": run_solvecheck}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cnpdg",
        description=(
            "Steady multi-ion electrochemical transport: refinement studies, "
            "the parallel-plate benchmark, and solver comparisons."
        ),
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    helps = {
        "mms": "grid-refinement error study on the manufactured problem",
        "reactor": "parallel-plate electrodeposition benchmark",
        "solvecheck": "preconditioner comparison on first-Newton-step systems",
    }
    for kind, text in helps.items():
        sp = sub.add_parser(kind, help=text)
        sp.add_argument(
            "--config", required=True, type=Path, help="YAML configuration file"
        )
        sp.add_argument(
            "--out", required=True, type=Path, help="output directory"
        )
        sp.add_argument(
            "--threads", type=int, default=1, help="worker-thread budget"
        )
        sp.add_argument(
            "--deterministic",
            action="store_true",
            help="force serial reductions for bit-for-bit reproducible output",
        )
    return parser


def load_config(path: Path) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if data is None:
        data = {}
    return RunConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg.kind != args.kind:
            raise ConfigError(
                f"config kind {cfg.kind!r} does not match "
                f"subcommand {args.kind!r}"
            )
        threads = max(1, args.threads)
        if args.deterministic:
            threads = 1
        cfg = dataclasses.replace(
            cfg,
            n_threads=threads,
            deterministic=cfg.deterministic or args.deterministic,
        )
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        args.out.mkdir(parents=True, exist_ok=True)
        summary = _RUNNERS[args.kind](cfg, args.out)
    except (NonlinearSolveError, LinearSolveFailure) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO

    print(f"{args.kind}: wrote outputs to {args.out}")
    for key, value in summary.items():
        if key != "rows":
            print(f"  {key}: {value}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
