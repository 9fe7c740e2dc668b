#!/usr/bin/env python3
"""Compare concentration-block preconditioners on first-Newton-step systems."""

import argparse
import sys
from pathlib import Path

from cnpdg.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--config", type=Path, default=ROOT / "configs" / "solvecheck.yaml"
    )
    parser.add_argument("--out", type=Path, default=ROOT / "out" / "solvecheck")
    args = parser.parse_args()
    sys.exit(
        main(
            ["solvecheck", "--config", str(args.config), "--out", str(args.out)]
        )
    )
