"""Dense 3D volumes: raw I/O, normalization, blockification, stitching.

A volume is a (depth, height, width) float32 array; the C-order linear
index is (z*H + y)*W + x, matching the on-disk raw format ("zyx" order,
little-endian f32 payload plus a JSON sidecar).

Blocks are fixed-size sub-volumes cut on a stride grid; blocks that
extend past the boundary are padded.  `stitch` is the inverse used at
inference time: overlapping voxels are averaged with accumulation in
sorted-origin order so results are bit-reproducible.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    AlignmentMismatch,
    BadMeta,
    CoverageGap,
    SizeMismatch,
    UnsupportedDtype,
)

_META_KEYS = ("width", "height", "depth")


@dataclass
class Volume3D:
    """Dense voxel grid; `data` has shape (depth, height, width), float32."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise BadMeta(f"volume data must be 3-d, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise BadMeta("volume contains non-finite voxels")

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def depth(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        """(W, H, D)"""
        return (self.width, self.height, self.depth)

    @property
    def voxels(self) -> np.ndarray:
        """Flat f32 view, linear index (z*H + y)*W + x."""
        return self.data.reshape(-1)


@dataclass
class Block:
    """Sub-volume cut from a source volume at `origin` (x0, y0, z0)."""

    origin: tuple[int, int, int]
    size: tuple[int, int, int]  # (bw, bh, bd)
    data: np.ndarray  # shape (bd, bh, bw)

    def __post_init__(self):
        bw, bh, bd = self.size
        if bw <= 0 or bh <= 0 or bd <= 0:
            raise BadMeta(f"block size must be positive, got {self.size}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.shape != (bd, bh, bw):
            raise SizeMismatch(f"block data shape {self.data.shape} != size {self.size}")


@dataclass
class BlockGridSpec:
    block_size: tuple[int, int, int] = (100, 100, 5)
    stride: tuple[int, int, int] | None = None  # None = block_size (no overlap)
    pad_value: float = 0.0

    def __post_init__(self):
        if self.stride is None:
            self.stride = self.block_size
        for b, s in zip(self.block_size, self.stride):
            if s < 1:
                raise BadMeta(f"stride must be >= 1, got {self.stride}")
            if s > b:
                raise BadMeta(f"stride {self.stride} exceeds block size {self.block_size}")


def save_raw(v: Volume3D, data_path, meta_path) -> None:
    """Write the little-endian f32 payload and its JSON sidecar atomically."""
    meta = {
        "width": v.width,
        "height": v.height,
        "depth": v.depth,
        "dtype": "f32le",
        "order": "zyx",
    }
    write_atomic(data_path, v.data.astype("<f4", copy=False).tobytes())
    write_atomic(meta_path, (json.dumps(meta) + "\n").encode())


def load_raw(data_path, meta_path) -> Volume3D:
    """Bitwise inverse of save_raw."""
    try:
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise BadMeta(f"cannot read meta {meta_path}: {exc}") from None
    if not isinstance(meta, dict) or any(k not in meta for k in _META_KEYS):
        raise BadMeta(f"meta must declare {_META_KEYS}")
    dims = []
    for k in _META_KEYS:
        val = meta[k]
        if not isinstance(val, int) or val <= 0:
            raise BadMeta(f"meta field {k!r} must be a positive integer, got {val!r}")
        dims.append(val)
    w, h, d = dims
    if meta.get("dtype") != "f32le":
        raise UnsupportedDtype(f"dtype {meta.get('dtype')!r} (only 'f32le' supported)")
    if meta.get("order") != "zyx":
        raise BadMeta(f"order {meta.get('order')!r} (only 'zyx' supported)")
    payload = open(data_path, "rb").read()
    expected = 4 * w * h * d
    if len(payload) != expected:
        raise SizeMismatch(f"payload is {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(d, h, w)
    return Volume3D(data.copy())


def normalize(v: Volume3D, lo_pct: float = 1.0, hi_pct: float = 99.0) -> Volume3D:
    """Percentile clip then affine map to [0, 1]; constant volumes map to 0."""
    lo, hi = np.percentile(v.data, [lo_pct, hi_pct])
    if hi <= lo:
        return Volume3D(np.zeros_like(v.data))
    out = (np.clip(v.data.astype(np.float64), lo, hi) - lo) / (hi - lo)
    return Volume3D(out.astype(np.float32))


def _axis_origins(extent: int, stride: int) -> list[int]:
    count = math.ceil(extent / stride)
    return [i * stride for i in range(count) if i * stride < extent]


def blockify(v: Volume3D, spec: BlockGridSpec) -> list[Block]:
    """Cut the volume on the stride grid; boundary blocks are padded.

    Block order: z-major, then y, then x fastest.
    """
    bw, bh, bd = spec.block_size
    sx, sy, sz = spec.stride
    w, h, d = v.dims
    blocks = []
    for z0 in _axis_origins(d, sz):
        for y0 in _axis_origins(h, sy):
            for x0 in _axis_origins(w, sx):
                data = np.full((bd, bh, bw), spec.pad_value, dtype=np.float32)
                zs, ys, xs = min(bd, d - z0), min(bh, h - y0), min(bw, w - x0)
                data[:zs, :ys, :xs] = v.data[z0:z0 + zs, y0:y0 + ys, x0:x0 + xs]
                blocks.append(Block((x0, y0, z0), spec.block_size, data))
    return blocks


def stitch(blocks, dims: tuple[int, int, int]) -> Volume3D:
    """Reassemble per-block predictions into a (W, H, D)-dimensioned volume.

    `blocks` is an iterable of (origin, data) pairs or Block instances.
    Overlaps are averaged; accumulation runs in sorted-origin order
    (z, y, x) so the result is bit-reproducible.  Regions of a block
    outside `dims` (padding) are discarded.
    """
    w, h, d = dims
    pairs = []
    for item in blocks:
        if isinstance(item, Block):
            pairs.append((item.origin, item.data))
        else:
            origin, data = item
            pairs.append((tuple(origin), np.asarray(data, dtype=np.float32)))
    pairs.sort(key=lambda p: (p[0][2], p[0][1], p[0][0]))

    acc = np.zeros((d, h, w), dtype=np.float32)
    cover = np.zeros((d, h, w), dtype=np.float32)
    for (x0, y0, z0), data in pairs:
        bd, bh, bw = data.shape
        zs, ys, xs = min(bd, d - z0), min(bh, h - y0), min(bw, w - x0)
        if zs <= 0 or ys <= 0 or xs <= 0:
            continue
        acc[z0:z0 + zs, y0:y0 + ys, x0:x0 + xs] += data[:zs, :ys, :xs]
        cover[z0:z0 + zs, y0:y0 + ys, x0:x0 + xs] += 1.0
    if (cover == 0).any():
        n = int((cover == 0).sum())
        raise CoverageGap(f"{n} voxels not covered by any block")
    return Volume3D(acc / cover)


def foreground_ratio(label_block: Block, threshold: float = 0.5) -> float:
    """Fraction of voxels with label >= threshold."""
    return float((label_block.data >= threshold).sum()) / label_block.data.size


def filter_training_blocks(image_blocks, label_blocks, tau: float):
    """Keep (image, label) block pairs whose label foreground ratio >= tau.

    Lists must pair up by origin; order is preserved.
    """
    if len(image_blocks) != len(label_blocks):
        raise AlignmentMismatch(
            f"{len(image_blocks)} image blocks vs {len(label_blocks)} label blocks")
    kept = []
    for img, lab in zip(image_blocks, label_blocks):
        if img.origin != lab.origin:
            raise AlignmentMismatch(f"origin {img.origin} paired with {lab.origin}")
        if foreground_ratio(lab) >= tau:
            kept.append((img, lab))
    return kept


def write_atomic(path, payload: bytes) -> None:
    """Write bytes via temp file + rename so partial files never appear."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)
