"""Dice and 95th-percentile Hausdorff distance, plus whole-volume evaluation.

Masks are boolean (depth, height, width) arrays.  Hd95 works on surface
voxels (foreground with at least one background 6-neighbor; the volume
border counts as background) and pools both directed distance lists
before taking the nearest-rank 95th percentile.  An empty prediction is
a defined failure for Hd95 (reported as None), not a number: degenerate
models must not silently average into a benchmark table.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimMismatch, EmptyMask
from .numerics import sigmoid
from .vit import VitConfig, model_forward, model_kind
from .volume import BlockGridSpec, Volume3D, blockify, stitch


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """2|A&B| / (|A|+|B|); two empty masks count as a perfect match."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimMismatch(f"mask dims differ: {a.shape} vs {b.shape}")
    na, nb = int(a.sum()), int(b.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / (na + nb)


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """(n, 3) integer (z, y, x) coordinates of surface voxels."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = np.ones_like(mask)
    for axis in range(3):
        for shift in (1, -1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    return np.argwhere(mask & ~interior)


def hd95(a: np.ndarray, b: np.ndarray) -> float:
    """Nearest-rank 95th percentile of pooled symmetric surface distances."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimMismatch(f"mask dims differ: {a.shape} vs {b.shape}")
    if not a.any() or not b.any():
        raise EmptyMask("hd95 requires two non-empty masks")
    sa = surface_voxels(a).astype(np.float64)
    sb = surface_voxels(b).astype(np.float64)
    d_ab = cKDTree(sb).query(sa)[0]
    d_ba = cKDTree(sa).query(sb)[0]
    pooled = np.sort(np.concatenate([d_ab, d_ba]))
    rank = math.ceil(0.95 * pooled.size) - 1
    return float(pooled[rank])


@dataclass
class VolumeEval:
    dice: float
    hd95: float | None  # None = undefined (a mask was empty)

    def to_dict(self) -> dict:
        return {"dice": self.dice, "hd95": self.hd95}


@dataclass
class EvalResult:
    dice: float
    hd95: float | None
    hd95_failures: int = 0
    volumes: list[VolumeEval] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "dice": self.dice,
            "hd95": self.hd95,
            "hd95_failures": self.hd95_failures,
            "volumes": [v.to_dict() for v in self.volumes],
        }, sort_keys=True)


def predict_volume(params, cfg: VitConfig, image: Volume3D,
                   spec: BlockGridSpec | None = None) -> Volume3D:
    """Blockify, run the model per block, sigmoid, stitch probabilities."""
    if spec is None:
        spec = BlockGridSpec(block_size=(cfg.img_hw[1], cfg.img_hw[0], cfg.block_depth))
    kind = model_kind(params)
    pairs = []
    for block in blockify(image, spec):
        x = block.data[None] if kind == "3d" else block.data[0][None]
        logits, _ = model_forward(params, cfg, x)
        probs = sigmoid(logits.astype(np.float32))
        if kind == "2d":
            probs = probs.reshape(1, *probs.shape[-2:])
        pairs.append((block.origin, probs))
    return stitch(pairs, image.dims)


def evaluate(params, cfg: VitConfig, image: Volume3D, gt: np.ndarray,
             prob_threshold: float = 0.5,
             spec: BlockGridSpec | None = None) -> EvalResult:
    """Dice / Hd95 of the stitched, thresholded prediction against `gt`."""
    gt = np.asarray(gt, dtype=bool)
    if gt.shape != image.data.shape:
        raise DimMismatch(f"gt {gt.shape} vs image {image.data.shape}")
    probs = predict_volume(params, cfg, image, spec)
    pred = probs.data >= prob_threshold
    d = dice(pred, gt)
    try:
        h: float | None = hd95(pred, gt)
        failures = 0
    except EmptyMask:
        h = None
        failures = 1
    vol = VolumeEval(d, h)
    return EvalResult(d, h, failures, [vol])


def aggregate(results: list[EvalResult]) -> EvalResult:
    """Mean Dice over volumes; mean Hd95 over volumes where it is defined."""
    vols = [v for r in results for v in r.volumes]
    if not vols:
        raise EmptyMask("nothing to aggregate")
    mean_dice = float(np.mean([v.dice for v in vols]))
    defined = [v.hd95 for v in vols if v.hd95 is not None]
    mean_hd = float(np.mean(defined)) if defined else None
    failures = sum(1 for v in vols if v.hd95 is None)
    return EvalResult(mean_dice, mean_hd, failures, vols)
