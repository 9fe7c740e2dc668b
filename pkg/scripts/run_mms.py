#!/usr/bin/env python3
"""Run a grid-refinement error study from a shipped (or custom) config."""

import argparse
import sys
from pathlib import Path

from cnpdg.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--config",
        type=Path,
        default=ROOT / "configs" / "mms3d_p1.yaml",
        help="run configuration (default: the 3D four-level study)",
    )
    parser.add_argument("--out", type=Path, default=ROOT / "out" / "mms")
    args = parser.parse_args()
    sys.exit(main(["mms", "--config", str(args.config), "--out", str(args.out)]))
