#!/usr/bin/env python3
"""Run the parallel-plate electrodeposition benchmark."""

import argparse
import sys
from pathlib import Path

from cnpdg.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--config", type=Path, default=ROOT / "configs" / "reactor.yaml"
    )
    parser.add_argument("--out", type=Path, default=ROOT / "out" / "reactor")
    args = parser.parse_args()
    sys.exit(
        main(["reactor", "--config", str(args.config), "--out", str(args.out)])
    )
