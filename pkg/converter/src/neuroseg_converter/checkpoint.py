"""Convert PyTorch ViT checkpoints into NWA1 archives.

Values are preserved exactly for f32 sources; f64 tensors are downcast
with a warning.  Unmapped source keys warn, missing canonical keys fail.
The converter never inflates kernels: depth inflation belongs to the
training toolkit.
"""

from __future__ import annotations

import logging

import numpy as np
import torch

from .errors import MissingKey, ShapeConflict
from .namemap import NameMap
from .nwa import write_nwa

log = logging.getLogger("neuroseg_converter")

_SUBDICT_CANDIDATES = ("state_dict", "model", "teacher", "student")


def load_state_dict(path, name_map: NameMap) -> dict[str, torch.Tensor]:
    obj = torch.load(path, map_location="cpu", weights_only=True)
    if name_map.state_dict_key is not None:
        if name_map.state_dict_key not in obj:
            raise MissingKey(name_map.state_dict_key)
        obj = obj[name_map.state_dict_key]
    elif isinstance(obj, dict) and not all(torch.is_tensor(v) for v in obj.values()):
        for key in _SUBDICT_CANDIDATES:
            if key in obj and isinstance(obj[key], dict):
                obj = obj[key]
                break
    if not isinstance(obj, dict):
        raise ShapeConflict(f"checkpoint did not contain a tensor dict: {type(obj)}")
    flat = {}
    for key, value in obj.items():
        if not torch.is_tensor(value):
            continue
        for prefix in name_map.strip_prefixes:
            if key.startswith(prefix):
                key = key[len(prefix):]
        flat[key] = value
    return flat


def _to_f32(name: str, t: torch.Tensor) -> np.ndarray:
    arr = t.detach().cpu().numpy()
    if arr.dtype == np.float64:
        log.warning("downcasting %s from f64 to f32", name)
    return np.ascontiguousarray(arr, dtype=np.float32)


def convert_state_dict(state: dict[str, torch.Tensor],
                       name_map: NameMap) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    used: set[str] = set()
    for rule in name_map.rules:
        pieces = []
        for key in rule.src:
            if key not in state:
                raise MissingKey(key)
            used.add(key)
            pieces.append(_to_f32(rule.dst, state[key]))
        value = pieces[0] if len(pieces) == 1 else np.concatenate(pieces, axis=rule.concat_axis)
        out[rule.dst] = name_map.apply_transform(rule, value)
    for key in sorted(set(state) - used):
        log.warning("unmapped source key %s (ignored)", key)
    _validate_canonical_shapes(out)
    return out


def _validate_canonical_shapes(arch: dict[str, np.ndarray]) -> None:
    """Cross-check the canonical encoder layout when its anchors are present."""
    if "cls" in arch:
        if arch["cls"].ndim != 2 or arch["cls"].shape[0] != 1:
            raise ShapeConflict(f"cls must be [1, e], got {arch['cls'].shape}")
        e = arch["cls"].shape[1]
        if "pos" in arch and (arch["pos"].ndim != 2 or arch["pos"].shape[1] != e):
            raise ShapeConflict(f"pos {arch['pos'].shape} does not match e={e}")
        if "patch_embed.w" in arch and arch["patch_embed.w"].shape[0] != e:
            raise ShapeConflict(
                f"patch_embed.w {arch['patch_embed.w'].shape} does not match e={e}")
        for name, w in arch.items():
            if name.endswith(".attn.wqkv") and w.shape != (e, 3 * e):
                raise ShapeConflict(f"{name} is {w.shape}, expected {(e, 3 * e)}")
            if name.endswith(".attn.wo") and w.shape != (e, e):
                raise ShapeConflict(f"{name} is {w.shape}, expected {(e, e)}")


def convert_checkpoint(src_path, name_map: NameMap, out_path) -> dict[str, np.ndarray]:
    state = load_state_dict(src_path, name_map)
    arch = convert_state_dict(state, name_map)
    write_nwa(arch, out_path)
    return arch
