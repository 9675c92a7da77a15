#!/usr/bin/env python3
"""End-to-end walkthrough on a small config: synthesize data, pretrain the
2D model, transfer with both strategies, train 3D models, and evaluate.

    python scripts/demo_pipeline.py [--workdir runs/demo]
"""

import argparse
import sys
from pathlib import Path

from neuroseg.cli import main


def run(argv):
    print(f"$ neuroseg {' '.join(argv)}")
    rc = main(argv)
    if rc != 0:
        sys.exit(rc)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--workdir", default="runs/demo")
    ap.add_argument("--config", default="configs/micro.toml")
    args = ap.parse_args()
    wd = Path(args.workdir)
    wd.mkdir(parents=True, exist_ok=True)
    cfg = args.config

    run(["synth", "--config", cfg, "--out", str(wd / "data")])
    run(["pretrain2d", "--config", cfg, "--out", str(wd / "pretrained2d.nwa")])
    run(["transfer", "--src", str(wd / "pretrained2d.nwa"), "--strategy", "center",
         "--config", cfg, "--out", str(wd / "init3d_center.nwa")])
    run(["train3d", "--config", cfg, "--init", f"archive:{wd / 'init3d_center.nwa'}",
         "--out", str(wd / "model3d.nwa")])
    run(["infer", "--config", cfg, "--checkpoint", str(wd / "model3d.nwa"),
         "--volume", str(wd / "data" / "test_000.raw"),
         "--out", str(wd / "pred_000.raw")])
    run(["eval", "--pred", str(wd / "pred_000.raw"),
         "--gt", str(wd / "data" / "test_000_label.raw")])
