"""Console entry points: convert-ckpt and tiff2raw."""

from __future__ import annotations

import argparse
import logging
import sys

from .checkpoint import convert_checkpoint
from .errors import ConverterError
from .namemap import load_name_map
from .tiff import tiff_to_raw


def main_convert(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="convert-ckpt",
                                 description="PyTorch ViT checkpoint -> NWA1 archive")
    ap.add_argument("--in", dest="src", required=True, help="checkpoint path (.pth)")
    ap.add_argument("--map", dest="map_path", required=True, help="name-map YAML")
    ap.add_argument("--layers", type=int, default=None,
                    help="override the map's encoder layer count")
    ap.add_argument("--out", required=True, help="output .nwa path")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        name_map = load_name_map(args.map_path, layers=args.layers)
        arch = convert_checkpoint(args.src, name_map, args.out)
    except ConverterError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {len(arch)} tensors to {args.out}")
    return 0


def main_tiff(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="tiff2raw",
                                 description="single-channel multi-page TIFF -> raw+JSON volume")
    ap.add_argument("--in", dest="src", required=True)
    ap.add_argument("--out-data", required=True)
    ap.add_argument("--out-meta", required=True)
    args = ap.parse_args(argv)
    try:
        w, h, d = tiff_to_raw(args.src, args.out_data, args.out_meta)
    except ConverterError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {w}x{h}x{d} volume to {args.out_data}")
    return 0


if __name__ == "__main__":
    sys.exit(main_convert())
