"""Minimal f32 tensor ops with hand-written backward passes.

Exactly the operations the ViT needs, no general tape: each op comes as
`op_fwd(...) -> (out, ctx)` plus `op_bwd(ctx, dout) -> grads`, and a
convenience `op(...)` returning just the output.  Everything is float32.

matmul accumulates with k innermost (a loop of rank-1 updates), which
fixes the summation order: results are bit-identical to a naive triple
loop and reproducible across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import BadHeadCount, NonFiniteValue, ShapeMismatch

# Debug-mode finiteness checking; off by default for speed.
_debug_finite = False


def set_debug_checks(enabled: bool) -> None:
    global _debug_finite
    _debug_finite = bool(enabled)


def _check(x: np.ndarray, where: str) -> np.ndarray:
    if _debug_finite and not np.isfinite(x).all():
        raise NonFiniteValue(f"non-finite values in {where}")
    return x


@dataclass
class Tensor:
    """Parameter container: f32 data plus an optional gradient buffer."""

    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.grad is not None:
            self.grad = np.ascontiguousarray(self.grad, dtype=np.float32)
            if self.grad.shape != self.data.shape:
                raise ShapeMismatch("grad shape differs from data shape")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.zero_grad()
        self.grad += g.reshape(self.data.shape)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """[m,k] @ [k,n] with k-innermost accumulation (fixed summation order)."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"inner dims differ: {a.shape} @ {b.shape}")
    m, k = a.shape
    out = np.zeros((m, b.shape[1]), dtype=a.dtype)
    for i in range(k):
        out += a[:, i:i + 1] * b[i]
    return _check(out, "matmul")


def matmul_bwd(ctx, dout):
    a, b = ctx
    return matmul(dout, b.T), matmul(a.T, dout)


def linear_fwd(x, w, b):
    if b.shape != (w.shape[1],):
        raise ShapeMismatch(f"bias {b.shape} does not match weight {w.shape}")
    return matmul(x, w) + b, (x, w)


def linear_bwd(ctx, dout):
    x, w = ctx
    dx = matmul(dout, w.T)
    dw = matmul(x.T, dout)
    db = dout.sum(axis=0)
    return dx, dw, db


def layer_norm_fwd(x, gamma, beta, eps: float = 1e-6):
    """Per-row normalization with biased variance."""
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeMismatch(f"layer_norm shapes: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    y = xhat * gamma + beta
    return _check(y, "layer_norm"), (xhat, inv_std, gamma)


def layer_norm_bwd(ctx, dout):
    xhat, inv_std, gamma = ctx
    e = xhat.shape[1]
    dxhat = dout * gamma
    dx = (dxhat - dxhat.mean(axis=1, keepdims=True)
          - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)) * inv_std
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    return dx, dgamma, dbeta


def layer_norm(x, gamma, beta, eps: float = 1e-6):
    return layer_norm_fwd(x, gamma, beta, eps)[0]


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu_fwd(x):
    """tanh-approximation GELU."""
    u = _GELU_C * (x + 0.044715 * x * x * x)
    th = np.tanh(u)
    y = 0.5 * x * (1.0 + th)
    return _check(y, "gelu"), (x, th)


def gelu_bwd(ctx, dout):
    x, th = ctx
    du_dx = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
    dydx = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du_dx
    return (dout * dydx,)


def gelu(x):
    return gelu_fwd(x)[0]


def softmax_lastdim_fwd(x):
    """Max-subtracted stable softmax along the last axis."""
    m = x.max(axis=-1, keepdims=True)
    ex = np.exp(x - m)
    p = ex / ex.sum(axis=-1, keepdims=True)
    return _check(p, "softmax"), (p,)


def softmax_lastdim_bwd(ctx, dout):
    (p,) = ctx
    return (p * (dout - (dout * p).sum(axis=-1, keepdims=True)),)


def softmax_lastdim(x):
    return softmax_lastdim_fwd(x)[0]


def multi_head_attention_fwd(x, wqkv, bqkv, wo, bo, heads: int):
    """Standard pre-projection MHSA on [n, e] tokens, scale 1/sqrt(e/h)."""
    n, e = x.shape
    if e % heads != 0:
        raise BadHeadCount(f"embed dim {e} not divisible by {heads} heads")
    if wqkv.shape != (e, 3 * e) or wo.shape != (e, e):
        raise ShapeMismatch(f"attention weights {wqkv.shape}, {wo.shape} for e={e}")
    dh = e // heads
    scale = 1.0 / math.sqrt(dh)

    qkv, ctx_in = linear_fwd(x, wqkv, bqkv)
    q, k, v = qkv[:, :e], qkv[:, e:2 * e], qkv[:, 2 * e:]
    ctxs = []
    merged = np.empty((n, e), dtype=x.dtype)
    for i in range(heads):
        sl = slice(i * dh, (i + 1) * dh)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        scores = matmul(qh, kh.T) * scale
        p, _ = softmax_lastdim_fwd(scores)
        merged[:, sl] = matmul(p, vh)
        ctxs.append((qh, kh, vh, p))
    out, ctx_out = linear_fwd(merged, wo, bo)
    return _check(out, "mha"), (ctx_in, ctxs, ctx_out, scale, dh)


def multi_head_attention_bwd(ctx, dout):
    ctx_in, ctxs, ctx_out, scale, dh = ctx
    dmerged, dwo, dbo = linear_bwd(ctx_out, dout)
    n = dmerged.shape[0]
    e = dh * len(ctxs)
    dqkv = np.empty((n, 3 * e), dtype=dmerged.dtype)
    for i, (qh, kh, vh, p) in enumerate(ctxs):
        sl = slice(i * dh, (i + 1) * dh)
        dctx_h = dmerged[:, sl]
        dp = matmul(dctx_h, vh.T)
        dv = matmul(p.T, dctx_h)
        (dscores,) = softmax_lastdim_bwd((p,), dp)
        dscores = dscores * scale
        dq = matmul(dscores, kh)
        dk = matmul(dscores.T, qh)
        dqkv[:, i * dh:(i + 1) * dh] = dq
        dqkv[:, e + i * dh:e + (i + 1) * dh] = dk
        dqkv[:, 2 * e + i * dh:2 * e + (i + 1) * dh] = dv
    dx, dwqkv, dbqkv = linear_bwd(ctx_in, dqkv)
    return dx, dwqkv, dbqkv, dwo, dbo


def multi_head_attention(x, wqkv, bqkv, wo, bo, heads: int):
    return multi_head_attention_fwd(x, wqkv, bqkv, wo, bo, heads)[0]


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class AdamState:
    t: int = 0
    m: dict = dc_field(default_factory=dict)
    v: dict = dc_field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> None:
    """Bias-corrected Adam with decoupled weight decay, in place.

    Iteration order is the dict insertion order, which is fixed by the
    canonical parameter layout.
    """
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)
        if weight_decay:
            p.data -= lr * weight_decay * p.data


def finite_difference_check(f, params, h_scale: float = 1e-3, f_forward=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f(params) -> scalar` must populate each Tensor's `.grad`; that pass
    runs at native f32.  Perturbed evaluations use `f_forward` when given
    (a cheaper, forward-only version of the same scalar), else `f`, and
    run with float64 parameter buffers: the ops are dtype-generic, and
    evaluating the differences at f64 keeps the estimate's noise floor
    far below the 1e-2 tolerance even for near-zero gradients, while the
    analytic side under test stays float32.  The step is h = h_scale *
    max(1, |x|) per coordinate; relative error denominators are
    max(|analytic|, |numeric|, 1e-6).
    """
    fwd = f_forward if f_forward is not None else f
    for p in params:
        p.zero_grad()
    f(params)
    analytic = [p.grad.copy() for p in params]

    saved = [p.data for p in params]
    for p in params:
        p.data = p.data.astype(np.float64)
    try:
        max_rel = 0.0
        for p, g in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = g.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                h = h_scale * max(1.0, abs(float(orig)))
                flat[idx] = orig + h
                f_hi = float(fwd(params))
                flat[idx] = orig - h
                f_lo = float(fwd(params))
                flat[idx] = orig
                num = (f_hi - f_lo) / (2.0 * h)
                ana = float(gflat[idx])
                rel = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
                max_rel = max(max_rel, rel)
    finally:
        for p, data in zip(params, saved):
            p.data = data
    return max_rel
