"""2D-to-3D weight transfer and the binary weight archive.

The patch-embedding kernel is the only layer whose shape differs between
the 2D and 3D models, so transfer means: inflate that kernel along depth
(Average spreads w/D across all slices, Center puts w at the middle
slice with zeros elsewhere), copy every encoder tensor verbatim,
resample the positional embedding if the token grids differ, and
freshly initialize the decoder (the pre-trained model has none).

Archives (.nwa) are a little-endian, versioned, name-sorted container of
f32 tensors; round-trips are bit-exact.
"""

from __future__ import annotations

import enum
import struct

import numpy as np

from .errors import (
    BadChannels,
    BadDepth,
    BadMagic,
    DimMismatch,
    DuplicateName,
    MissingTensor,
    NonSquareGrid,
    Truncated,
    UnsupportedVersion,
)
from .numerics import Tensor
from .rng import Rng
from .vit import VitConfig, param_names, _param_shapes, interpolate_pos_embed

MAGIC = b"NWA1"
VERSION = 1
_DTYPE_F32 = 0


class TransferStrategy(enum.Enum):
    AVERAGE = "average"
    CENTER = "center"


def inflate_patch_embed(w2: np.ndarray, depth: int,
                        strategy: TransferStrategy) -> np.ndarray:
    """[e,C,p,p] -> [e,C,D,p,p].

    Average: every depth slice is w2 / D.  Center: w2 at slice floor(D/2),
    exact zeros elsewhere.  Biases are not touched by inflation.
    """
    if depth < 1:
        raise BadDepth(f"depth must be >= 1, got {depth}")
    if w2.ndim != 4:
        raise DimMismatch(f"expected a 2d kernel [e,C,p,p], got {w2.shape}")
    w2 = np.ascontiguousarray(w2, dtype=np.float32)
    if strategy is TransferStrategy.AVERAGE:
        slice_ = w2 / np.float32(depth)
        return np.repeat(slice_[:, :, None, :, :], depth, axis=2)
    w3 = np.zeros((w2.shape[0], w2.shape[1], depth, w2.shape[2], w2.shape[3]),
                  dtype=np.float32)
    w3[:, :, depth // 2] = w2
    return w3


def reduce_input_channels(w: np.ndarray) -> np.ndarray:
    """Collapse an RGB kernel to single-channel by summing the channels,
    so responses to gray images replicated across RGB are preserved."""
    if w.ndim != 4 or w.shape[1] != 3:
        raise BadChannels(f"expected [e,3,p,p], got {w.shape}")
    return w.sum(axis=1, keepdims=True, dtype=np.float32)


def required_2d_names(layers: int) -> list[str]:
    cfg_probe = [f"blocks.{i}" for i in range(layers)]
    names = ["patch_embed.w", "patch_embed.b", "cls", "pos"]
    for b in cfg_probe:
        names.extend([f"{b}.ln1.g", f"{b}.ln1.b",
                      f"{b}.attn.wqkv", f"{b}.attn.bqkv", f"{b}.attn.wo", f"{b}.attn.bo",
                      f"{b}.ln2.g", f"{b}.ln2.b",
                      f"{b}.mlp.w1", f"{b}.mlp.b1", f"{b}.mlp.w2", f"{b}.mlp.b2"])
    names.extend(["final_ln.g", "final_ln.b"])
    return names


def transfer_weights(src: dict[str, np.ndarray], cfg3d: VitConfig,
                     strategy: TransferStrategy, rng: Rng) -> dict[str, Tensor]:
    """Build 3D model parameters from a 2D archive.

    Encoder tensors are copied verbatim; the patch kernel is channel-reduced
    if needed and then inflated; `pos` is bilinearly resampled when the
    token grids differ; the decoder is re-initialized from `rng`.
    """
    e = cfg3d.embed_dim
    for name in required_2d_names(cfg3d.layers):
        if name not in src:
            raise MissingTensor(name)

    w2 = np.asarray(src["patch_embed.w"], dtype=np.float32)
    if w2.ndim != 4:
        raise DimMismatch(f"source patch kernel must be 2d [e,C,p,p], got {w2.shape}")
    if w2.shape[0] != e:
        raise DimMismatch(f"source embed dim {w2.shape[0]} != config {e}")
    if w2.shape[2] != cfg3d.patch or w2.shape[3] != cfg3d.patch:
        raise DimMismatch(f"source patch size {w2.shape[2:]} != config {cfg3d.patch}")
    if w2.shape[1] == 3 and cfg3d.in_channels == 1:
        w2 = reduce_input_channels(w2)
    elif w2.shape[1] != cfg3d.in_channels:
        raise DimMismatch(f"cannot map {w2.shape[1]} source channels to {cfg3d.in_channels}")

    # Encoder shape agreement (e, L, mlp_ratio); heads are config-only.
    for i in range(cfg3d.layers):
        wqkv = src[f"blocks.{i}.attn.wqkv"]
        if wqkv.shape != (e, 3 * e):
            raise DimMismatch(f"blocks.{i}.attn.wqkv is {wqkv.shape}, expected {(e, 3 * e)}")
        w1 = src[f"blocks.{i}.mlp.w1"]
        if w1.shape != (e, cfg3d.mlp_dim):
            raise DimMismatch(f"blocks.{i}.mlp.w1 is {w1.shape}, expected {(e, cfg3d.mlp_dim)}")
    if f"blocks.{cfg3d.layers}.ln1.g" in src:
        raise DimMismatch(f"source has more than {cfg3d.layers} encoder blocks")

    pos = np.asarray(src["pos"], dtype=np.float32)
    if pos.ndim != 2 or pos.shape[1] != e:
        raise DimMismatch(f"pos is {pos.shape}, expected (*, {e})")
    n_src = pos.shape[0] - 1
    if n_src != cfg3d.n_tokens:
        g_src = round(n_src ** 0.5)
        if g_src * g_src != n_src:
            raise NonSquareGrid(f"source token grid of {n_src} tokens is not square")
        if cfg3d.grid_h != cfg3d.grid_w:
            raise NonSquareGrid(f"target grid {cfg3d.grid_h}x{cfg3d.grid_w} is not square")
        pos = interpolate_pos_embed(pos, (g_src, g_src), (cfg3d.grid_h, cfg3d.grid_w))

    shapes = _param_shapes(cfg3d, "3d")
    params: dict[str, Tensor] = {}
    for name in param_names(cfg3d):
        if name == "patch_embed.w":
            data = inflate_patch_embed(w2, cfg3d.block_depth, strategy)
        elif name == "pos":
            data = pos
        elif name == "decoder.w":
            data = rng.trunc_normal_array(shapes[name], sigma=0.02).astype(np.float32)
        elif name == "decoder.b":
            data = np.zeros(shapes[name], dtype=np.float32)
        else:
            data = np.asarray(src[name], dtype=np.float32)
            if data.shape != shapes[name]:
                raise DimMismatch(f"{name} is {data.shape}, expected {shapes[name]}")
            data = data.copy()
        params[name] = Tensor(data)
    return params


def transfer_provenance(cfg3d: VitConfig) -> dict[str, str]:
    """name -> one of 'inflated', 'interpolated-or-copied', 'copied',
    're-initialized'; used by the CLI provenance table."""
    out = {}
    for name in param_names(cfg3d):
        if name == "patch_embed.w":
            out[name] = "inflated"
        elif name == "pos":
            out[name] = "interpolated-or-copied"
        elif name.startswith("decoder."):
            out[name] = "re-initialized"
        else:
            out[name] = "copied"
    return out


# -- archive I/O -----------------------------------------------------------------

def archive_bytes(arch: dict[str, np.ndarray]) -> bytes:
    """Serialize to the NWA1 layout; tensors stored in sorted-name order."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(arch))]
    for name in sorted(arch):
        data = np.ascontiguousarray(arch[name], dtype="<f4")
        if data.size == 0 or any(s <= 0 for s in data.shape):
            raise DimMismatch(f"tensor {name!r} has non-positive shape {data.shape}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(struct.pack("<B", _DTYPE_F32))
        parts.append(data.tobytes())
    return b"".join(parts)


def write_archive(arch: dict[str, np.ndarray], path) -> None:
    from .volume import write_atomic
    write_atomic(path, archive_bytes(arch))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise Truncated(f"needed {n} bytes at offset {self.off}, "
                            f"file has {len(self.buf)}")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out


def parse_archive(buf: bytes) -> dict[str, np.ndarray]:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise BadMagic("not an NWA1 archive")
    version, count = struct.unpack("<II", r.take(8))
    if version != VERSION:
        raise UnsupportedVersion(version)
    arch: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2))
        name = r.take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", r.take(1))
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        (dtype,) = struct.unpack("<B", r.take(1))
        if dtype != _DTYPE_F32:
            raise UnsupportedVersion(dtype)
        if any(d <= 0 for d in dims):
            raise Truncated(f"tensor {name!r} declares non-positive dims {dims}")
        n = int(np.prod(dims))
        data = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).copy()
        if name in arch:
            raise DuplicateName(name)
        arch[name] = data
    if r.off != len(buf):
        raise Truncated(f"{len(buf) - r.off} trailing bytes after last tensor")
    return arch


def read_archive(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return parse_archive(f.read())


def params_to_archive(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in params.items()}


def params_from_archive(arch: dict[str, np.ndarray], cfg: VitConfig,
                        kind: str) -> dict[str, Tensor]:
    """Load checkpointed parameters, validating the full canonical schema."""
    shapes = _param_shapes(cfg, kind)
    params: dict[str, Tensor] = {}
    for name in param_names(cfg):
        if name not in arch:
            raise MissingTensor(name)
        data = np.asarray(arch[name], dtype=np.float32)
        if data.shape != shapes[name]:
            raise DimMismatch(f"{name} is {data.shape}, expected {shapes[name]}")
        params[name] = Tensor(data.copy())
    return params
