"""2D and 3D ViT encoder-decoder segmenters.

Patch embedding turns an image (or a depth-D block) into a grid of
tokens; the 3D kernel spans the whole block depth with stride D, so the
token grid is the same in 2D and 3D and every encoder weight transfers
unchanged.  The encoder is a stack of pre-LN transformer blocks; the
decoder is a per-token linear head mapping each token back to its
p x p x D logit sub-volume.  Sigmoid is applied by callers.

Parameters live in an insertion-ordered dict keyed by canonical names
(`patch_embed.w`, `cls`, `blocks.<i>.attn.wqkv`, ..., `decoder.w`);
the same names are used by the weight archive and transfer code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadDepth, BadHeadCount, NonSquareGrid, ShapeMismatch
from .numerics import (
    Tensor,
    gelu_fwd,
    gelu_bwd,
    layer_norm_fwd,
    layer_norm_bwd,
    linear_fwd,
    linear_bwd,
    matmul,
    multi_head_attention_fwd,
    multi_head_attention_bwd,
)
from .rng import Rng


@dataclass
class VitConfig:
    img_hw: tuple[int, int] = (100, 100)
    patch: int = 10
    block_depth: int = 5  # 1 for the 2D model
    in_channels: int = 1
    embed_dim: int = 64
    layers: int = 4
    heads: int = 4
    mlp_ratio: int = 4

    def __post_init__(self):
        h, w = self.img_hw
        if h % self.patch or w % self.patch:
            raise ShapeMismatch(f"img_hw {self.img_hw} not divisible by patch {self.patch}")
        if self.embed_dim % self.heads:
            raise BadHeadCount(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.block_depth < 1:
            raise BadDepth(f"block_depth must be >= 1, got {self.block_depth}")
        if self.layers < 0 or self.embed_dim < 1 or self.in_channels < 1 or self.mlp_ratio < 1:
            raise ShapeMismatch("invalid config sizes")

    @property
    def grid_h(self) -> int:
        return self.img_hw[0] // self.patch

    @property
    def grid_w(self) -> int:
        return self.img_hw[1] // self.patch

    @property
    def n_tokens(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def mlp_dim(self) -> int:
        return self.embed_dim * self.mlp_ratio

    @property
    def decoder_dim(self) -> int:
        return self.patch * self.patch * self.block_depth


ENCODER_2D_NAMES = ("patch_embed.w", "patch_embed.b", "cls", "pos")


def block_param_names(i: int) -> list[str]:
    b = f"blocks.{i}"
    return [f"{b}.ln1.g", f"{b}.ln1.b",
            f"{b}.attn.wqkv", f"{b}.attn.bqkv", f"{b}.attn.wo", f"{b}.attn.bo",
            f"{b}.ln2.g", f"{b}.ln2.b",
            f"{b}.mlp.w1", f"{b}.mlp.b1", f"{b}.mlp.w2", f"{b}.mlp.b2"]


def param_names(cfg: VitConfig) -> list[str]:
    names = list(ENCODER_2D_NAMES)
    for i in range(cfg.layers):
        names.extend(block_param_names(i))
    names.extend(["final_ln.g", "final_ln.b", "decoder.w", "decoder.b"])
    return names


def _param_shapes(cfg: VitConfig, kind: str) -> dict[str, tuple[int, ...]]:
    e, c, p, d = cfg.embed_dim, cfg.in_channels, cfg.patch, cfg.block_depth
    if kind == "2d":
        patch_shape = (e, c, p, p)
    elif kind == "3d":
        patch_shape = (e, c, d, p, p)
    else:
        raise ValueError(f"kind must be '2d' or '3d', got {kind!r}")
    shapes = {
        "patch_embed.w": patch_shape,
        "patch_embed.b": (e,),
        "cls": (1, e),
        "pos": (1 + cfg.n_tokens, e),
        "final_ln.g": (e,),
        "final_ln.b": (e,),
        "decoder.w": (e, cfg.decoder_dim),
        "decoder.b": (cfg.decoder_dim,),
    }
    for i in range(cfg.layers):
        b = f"blocks.{i}"
        shapes.update({
            f"{b}.ln1.g": (e,), f"{b}.ln1.b": (e,),
            f"{b}.attn.wqkv": (e, 3 * e), f"{b}.attn.bqkv": (3 * e,),
            f"{b}.attn.wo": (e, e), f"{b}.attn.bo": (e,),
            f"{b}.ln2.g": (e,), f"{b}.ln2.b": (e,),
            f"{b}.mlp.w1": (e, cfg.mlp_dim), f"{b}.mlp.b1": (cfg.mlp_dim,),
            f"{b}.mlp.w2": (cfg.mlp_dim, e), f"{b}.mlp.b2": (e,),
        })
    return shapes


def init_params(cfg: VitConfig, rng: Rng, kind: str) -> dict[str, Tensor]:
    """Fresh parameters: truncated-normal (sigma 0.02) weights, zero biases,
    unit LayerNorm gains.  Draw order follows the canonical name order."""
    shapes = _param_shapes(cfg, kind)
    params: dict[str, Tensor] = {}
    for name in param_names(cfg):
        shape = shapes[name]
        if name.endswith((".g",)):
            data = np.ones(shape, dtype=np.float32)
        elif name.endswith((".b", ".b1", ".b2", ".bqkv", ".bo")):
            data = np.zeros(shape, dtype=np.float32)
        else:  # weights, cls, pos
            data = rng.trunc_normal_array(shape, sigma=0.02).astype(np.float32)
        params[name] = Tensor(data)
    return params


def init_params_2d(cfg: VitConfig, rng: Rng) -> dict[str, Tensor]:
    if cfg.block_depth != 1:
        raise BadDepth("2D model requires block_depth == 1")
    return init_params(cfg, rng, "2d")


def init_params_3d(cfg: VitConfig, rng: Rng) -> dict[str, Tensor]:
    return init_params(cfg, rng, "3d")


def model_kind(params) -> str:
    w = params["patch_embed.w"]
    rank = (w.data if isinstance(w, Tensor) else w).ndim
    if rank == 4:
        return "2d"
    if rank == 5:
        return "3d"
    raise ShapeMismatch(f"patch_embed.w has rank {rank}, expected 4 or 5")


# -- patch / block embedding ---------------------------------------------------

def _unfold_2d(image: np.ndarray, p: int) -> np.ndarray:
    c, h, w = image.shape
    gh, gw = h // p, w // p
    return (image.reshape(c, gh, p, gw, p)
            .transpose(1, 3, 0, 2, 4)
            .reshape(gh * gw, c * p * p))


def _unfold_3d(block: np.ndarray, p: int) -> np.ndarray:
    c, d, h, w = block.shape
    gh, gw = h // p, w // p
    return (block.reshape(c, d, gh, p, gw, p)
            .transpose(2, 4, 0, 1, 3, 5)
            .reshape(gh * gw, c * d * p * p))


def patch_embed_2d_fwd(image: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Non-overlapping p x p convolution with stride p; one token per patch."""
    if w.ndim != 4:
        raise ShapeMismatch(f"2d patch kernel must be [e,C,p,p], got {w.shape}")
    e, c, p, p2 = w.shape
    if p != p2:
        raise ShapeMismatch(f"patch kernel must be square, got {w.shape}")
    if image.ndim != 3 or image.shape[0] != c or image.shape[1] % p or image.shape[2] % p:
        raise ShapeMismatch(f"image {image.shape} incompatible with kernel {w.shape}")
    patches = np.ascontiguousarray(_unfold_2d(image, p))
    wmat = w.reshape(e, -1).T
    tokens = matmul(patches, wmat) + b
    return tokens, (patches, wmat, w.shape)


def patch_embed_3d_fwd(block: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3D block embedding: the kernel spans the full block depth, so the
    token grid matches the 2D case."""
    if w.ndim != 5:
        raise ShapeMismatch(f"3d patch kernel must be [e,C,D,p,p], got {w.shape}")
    e, c, d, p, p2 = w.shape
    if p != p2:
        raise ShapeMismatch(f"patch kernel must be square, got {w.shape}")
    if (block.ndim != 4 or block.shape[0] != c or block.shape[1] != d
            or block.shape[2] % p or block.shape[3] % p):
        raise ShapeMismatch(f"block {block.shape} incompatible with kernel {w.shape}")
    patches = np.ascontiguousarray(_unfold_3d(block, p))
    wmat = w.reshape(e, -1).T
    tokens = matmul(patches, wmat) + b
    return tokens, (patches, wmat, w.shape)


def patch_embed_bwd(ctx, dtokens):
    patches, wmat, w_shape = ctx
    dwmat = matmul(patches.T, dtokens)
    dw = dwmat.T.reshape(w_shape)
    db = dtokens.sum(axis=0)
    return dw, db


def patch_embed_2d(image, w, b):
    return patch_embed_2d_fwd(image, w, b)[0]


def patch_embed_3d(block, w, b):
    return patch_embed_3d_fwd(block, w, b)[0]


# -- encoder -------------------------------------------------------------------

def _p(params, name) -> np.ndarray:
    t = params[name]
    return t.data if isinstance(t, Tensor) else t


def encode_fwd(tokens: np.ndarray, params, cfg: VitConfig):
    """Prepend cls, add positions, run L pre-LN blocks, final LayerNorm."""
    if tokens.shape != (cfg.n_tokens, cfg.embed_dim):
        raise ShapeMismatch(f"tokens {tokens.shape}, expected {(cfg.n_tokens, cfg.embed_dim)}")
    x = np.concatenate([_p(params, "cls"), tokens], axis=0) + _p(params, "pos")
    layer_caches = []
    for i in range(cfg.layers):
        b = f"blocks.{i}"
        h1, ln1_ctx = layer_norm_fwd(x, _p(params, f"{b}.ln1.g"), _p(params, f"{b}.ln1.b"))
        att, att_ctx = multi_head_attention_fwd(
            h1, _p(params, f"{b}.attn.wqkv"), _p(params, f"{b}.attn.bqkv"),
            _p(params, f"{b}.attn.wo"), _p(params, f"{b}.attn.bo"), cfg.heads)
        x_mid = x + att
        h2, ln2_ctx = layer_norm_fwd(x_mid, _p(params, f"{b}.ln2.g"), _p(params, f"{b}.ln2.b"))
        m1, m1_ctx = linear_fwd(h2, _p(params, f"{b}.mlp.w1"), _p(params, f"{b}.mlp.b1"))
        g, g_ctx = gelu_fwd(m1)
        m2, m2_ctx = linear_fwd(g, _p(params, f"{b}.mlp.w2"), _p(params, f"{b}.mlp.b2"))
        x = x_mid + m2
        layer_caches.append((ln1_ctx, att_ctx, ln2_ctx, m1_ctx, g_ctx, m2_ctx))
    y, final_ctx = layer_norm_fwd(x, _p(params, "final_ln.g"), _p(params, "final_ln.b"))
    return y, (layer_caches, final_ctx)


def encode_bwd(dy, cache, cfg: VitConfig, grads: dict):
    layer_caches, final_ctx = cache
    dx, dg, db = layer_norm_bwd(final_ctx, dy)
    grads["final_ln.g"] = dg
    grads["final_ln.b"] = db
    for i in reversed(range(cfg.layers)):
        b = f"blocks.{i}"
        ln1_ctx, att_ctx, ln2_ctx, m1_ctx, g_ctx, m2_ctx = layer_caches[i]
        dgelu, dw2, db2 = linear_bwd(m2_ctx, dx)
        (dm1,) = gelu_bwd(g_ctx, dgelu)
        dh2, dw1, db1 = linear_bwd(m1_ctx, dm1)
        dx_mid_ln, dg2, dbeta2 = layer_norm_bwd(ln2_ctx, dh2)
        dx_mid = dx + dx_mid_ln
        dh1, dwqkv, dbqkv, dwo, dbo = multi_head_attention_bwd(att_ctx, dx_mid)
        dx_in_ln, dg1, dbeta1 = layer_norm_bwd(ln1_ctx, dh1)
        dx = dx_mid + dx_in_ln
        grads.update({
            f"{b}.ln1.g": dg1, f"{b}.ln1.b": dbeta1,
            f"{b}.attn.wqkv": dwqkv, f"{b}.attn.bqkv": dbqkv,
            f"{b}.attn.wo": dwo, f"{b}.attn.bo": dbo,
            f"{b}.ln2.g": dg2, f"{b}.ln2.b": dbeta2,
            f"{b}.mlp.w1": dw1, f"{b}.mlp.b1": db1,
            f"{b}.mlp.w2": dw2, f"{b}.mlp.b2": db2,
        })
    grads["pos"] = dx.copy()
    grads["cls"] = dx[0:1].copy()
    return dx[1:]  # gradient w.r.t. the embedded tokens


def encode(tokens, params, cfg: VitConfig):
    return encode_fwd(tokens, params, cfg)[0]


# -- decoder -------------------------------------------------------------------

def decode_linear_fwd(encoded: np.ndarray, params, cfg: VitConfig):
    """Per-token linear head; token (i, j) fills the (D, p, p) sub-volume
    at spatial patch (i, j).  The cls row is dropped."""
    if encoded.shape != (1 + cfg.n_tokens, cfg.embed_dim):
        raise ShapeMismatch(f"encoded {encoded.shape} for config {cfg}")
    tok = encoded[1:]
    y, ctx = linear_fwd(tok, _p(params, "decoder.w"), _p(params, "decoder.b"))
    d, p, gh, gw = cfg.block_depth, cfg.patch, cfg.grid_h, cfg.grid_w
    logits = (y.reshape(gh, gw, d, p, p)
              .transpose(2, 0, 3, 1, 4)
              .reshape(d, gh * p, gw * p))
    return logits, ctx


def decode_linear_bwd(dlogits, ctx, cfg: VitConfig, grads: dict):
    d, p, gh, gw = cfg.block_depth, cfg.patch, cfg.grid_h, cfg.grid_w
    dy = (dlogits.reshape(d, gh, p, gw, p)
          .transpose(1, 3, 0, 2, 4)
          .reshape(gh * gw, d * p * p))
    dtok, dw, db = linear_bwd(ctx, np.ascontiguousarray(dy))
    grads["decoder.w"] = dw
    grads["decoder.b"] = db
    e = dtok.shape[1]
    return np.concatenate([np.zeros((1, e), dtype=dtok.dtype), dtok], axis=0)


def decode_linear(encoded, params, cfg: VitConfig):
    return decode_linear_fwd(encoded, params, cfg)[0]


# -- full model ----------------------------------------------------------------

def model_forward(params, cfg: VitConfig, x: np.ndarray):
    """(logits, cache) for a [C,H,W] image (2D) or [C,D,H,W] block (3D)."""
    kind = model_kind(params)
    w, b = _p(params, "patch_embed.w"), _p(params, "patch_embed.b")
    if kind == "2d":
        if cfg.block_depth != 1:
            raise ShapeMismatch("2d parameters require a block_depth == 1 config")
        if x.ndim != 3:
            raise ShapeMismatch(f"2d model expects [C,H,W], got {x.shape}")
        tokens, emb_ctx = patch_embed_2d_fwd(x, w, b)
    else:
        if x.ndim != 4:
            raise ShapeMismatch(f"3d model expects [C,D,H,W], got {x.shape}")
        if x.shape[1] != cfg.block_depth:
            raise ShapeMismatch(f"block depth {x.shape[1]} != config {cfg.block_depth}")
        tokens, emb_ctx = patch_embed_3d_fwd(x, w, b)
    encoded, enc_cache = encode_fwd(tokens, params, cfg)
    logits, dec_ctx = decode_linear_fwd(encoded, params, cfg)
    return logits, (emb_ctx, enc_cache, dec_ctx)


def model_backward(cache, cfg: VitConfig, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every parameter given d(loss)/d(logits)."""
    emb_ctx, enc_cache, dec_ctx = cache
    grads: dict[str, np.ndarray] = {}
    dencoded = decode_linear_bwd(dlogits, dec_ctx, cfg, grads)
    dtokens = encode_bwd(dencoded, enc_cache, cfg, grads)
    dw, db = patch_embed_bwd(emb_ctx, dtokens)
    grads["patch_embed.w"] = dw
    grads["patch_embed.b"] = db
    return grads


def forward_2d(params, cfg: VitConfig, image: np.ndarray) -> np.ndarray:
    """Logits [1, H, W]; sigmoid is the caller's job."""
    if cfg.block_depth != 1:
        raise BadDepth("forward_2d requires a block_depth == 1 config")
    return model_forward(params, cfg, image)[0]


def forward_3d(params, cfg: VitConfig, block: np.ndarray) -> np.ndarray:
    """Logits [D, H, W] for one block."""
    return model_forward(params, cfg, block)[0]


# -- positional embedding resampling --------------------------------------------

def interpolate_pos_embed(pos: np.ndarray, old_grid: tuple[int, int],
                          new_grid: tuple[int, int]) -> np.ndarray:
    """Bilinearly resample the spatial part of a positional embedding.

    Grids must be square; the cls row is copied through.  Sampling is
    align-corners (corners map to corners); a 1x1 target samples the
    field center.
    """
    g_old, g_old2 = old_grid
    g_new, g_new2 = new_grid
    if g_old != g_old2 or g_new != g_new2:
        raise NonSquareGrid(f"grids must be square, got {old_grid} -> {new_grid}")
    if pos.ndim != 2 or pos.shape[0] != 1 + g_old * g_old:
        raise ShapeMismatch(f"pos {pos.shape} does not match grid {old_grid}")
    if g_old == g_new:
        return pos.copy()
    e = pos.shape[1]
    field = pos[1:].astype(np.float64).reshape(g_old, g_old, e)
    if g_new > 1:
        coords = np.arange(g_new) * (g_old - 1) / (g_new - 1)
    else:
        coords = np.array([(g_old - 1) / 2.0])
    i0 = np.clip(np.floor(coords).astype(int), 0, g_old - 1)
    i1 = np.minimum(i0 + 1, g_old - 1)
    frac = coords - i0
    # Separable bilinear: rows then columns.
    rows = field[i0] * (1.0 - frac)[:, None, None] + field[i1] * frac[:, None, None]
    out = (rows[:, i0] * (1.0 - frac)[None, :, None]
           + rows[:, i1] * frac[None, :, None])
    result = np.empty((1 + g_new * g_new, e), dtype=np.float32)
    result[0] = pos[0]
    result[1:] = out.reshape(g_new * g_new, e).astype(np.float32)
    return result
