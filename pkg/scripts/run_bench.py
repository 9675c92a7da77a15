#!/usr/bin/env python3
"""Run the full benchmark matrix and print the results table.

    python scripts/run_bench.py --out runs/desk [--config configs/desk.toml]
"""

import argparse
import sys
from pathlib import Path

from neuroseg.cli import main


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=None)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--seeds", default=None)
    args = ap.parse_args()
    Path(args.out).mkdir(parents=True, exist_ok=True)
    argv = ["bench", "--out", args.out, "--verbose"]
    if args.config:
        argv += ["--config", args.config]
    if args.seeds:
        argv += ["--seeds", args.seeds]
    sys.exit(main(argv))
