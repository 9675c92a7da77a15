"""Multi-page TIFF stacks <-> raw+JSON volumes.

Only single-channel TIFFs are accepted (grayscale integer or float
pages); intensities are cast to f32 exactly.  The raw format is the
toolkit's: little-endian f32 payload, C order (z, y, x), JSON sidecar.
"""

from __future__ import annotations

import json

import numpy as np
from PIL import Image, ImageSequence

from .errors import UnsupportedTiff

_SINGLE_CHANNEL_MODES = {"L", "I", "I;16", "I;16B", "I;16L", "F"}


def tiff_to_raw(tiff_path, out_data, out_meta) -> tuple[int, int, int]:
    """Returns the (W, H, D) of the written volume."""
    try:
        img = Image.open(tiff_path)
    except Exception as exc:
        raise UnsupportedTiff(f"cannot open {tiff_path}: {exc}") from None
    pages = []
    size = None
    for page in ImageSequence.Iterator(img):
        if page.mode not in _SINGLE_CHANNEL_MODES:
            raise UnsupportedTiff(f"page mode {page.mode!r} is not single-channel")
        if size is None:
            size = page.size
        elif page.size != size:
            raise UnsupportedTiff(f"page sizes differ: {page.size} vs {size}")
        pages.append(np.asarray(page, dtype=np.float32))
    if not pages:
        raise UnsupportedTiff("TIFF has no pages")
    stack = np.stack(pages, axis=0)  # (D, H, W)
    d, h, w = stack.shape
    with open(out_data, "wb") as f:
        f.write(stack.astype("<f4", copy=False).tobytes())
    with open(out_meta, "w", encoding="utf-8") as f:
        json.dump({"width": w, "height": h, "depth": d,
                   "dtype": "f32le", "order": "zyx"}, f)
        f.write("\n")
    return (w, h, d)


def raw_to_tiff(data_path, meta_path, out_tiff) -> None:
    """Inverse of tiff_to_raw: write a float32 multi-page TIFF."""
    with open(meta_path, "r", encoding="utf-8") as f:
        meta = json.load(f)
    w, h, d = meta["width"], meta["height"], meta["depth"]
    if meta.get("dtype") != "f32le" or meta.get("order") != "zyx":
        raise UnsupportedTiff(f"unsupported raw layout: {meta}")
    payload = open(data_path, "rb").read()
    stack = np.frombuffer(payload, dtype="<f4").reshape(d, h, w)
    frames = [Image.fromarray(stack[z], mode="F") for z in range(d)]
    frames[0].save(out_tiff, save_all=True, append_images=frames[1:])
