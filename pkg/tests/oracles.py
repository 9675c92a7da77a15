"""Independent brute-force oracles used to freeze expected values.

These deliberately re-derive results with the dumbest possible method
(triple loops, all-pairs scans, closed forms) and never call the code
paths they check, except for shared dataclasses.
"""

from __future__ import annotations

import math

import numpy as np


def matmul_naive(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple loop, k innermost, accumulating in the operand dtype."""
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            acc = a.dtype.type(0.0)
            for kk in range(k):
                acc = acc + a[i, kk] * b[kk, j]
            out[i, j] = acc
    return out


def capsules_of(morph):
    """(p0, p1, r0, r1) tuples: sphere per root, capsule per edge."""
    by_id = {n.id: n for n in morph.nodes}
    caps = []
    for n in morph.nodes:
        if n.parent_id == -1:
            p = np.array([n.x, n.y, n.z], dtype=np.float64)
            caps.append((p, p, n.radius, n.radius))
    for n in morph.nodes:
        if n.parent_id != -1:
            par = by_id[n.parent_id]
            caps.append((np.array([par.x, par.y, par.z], dtype=np.float64),
                         np.array([n.x, n.y, n.z], dtype=np.float64),
                         par.radius, n.radius))
    return caps


def scaled_distance_brute(xx, yy, zz, p0, p1, r0, r1):
    """s = dist / r(t) for every grid point; mirrors the spec formula."""
    dx, dy, dz = xx - p0[0], yy - p0[1], zz - p0[2]
    ux, uy, uz = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    len2 = ux * ux + uy * uy + uz * uz
    if len2 == 0.0:
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        return dist / max(r0, r1)
    t = (dx * ux + dy * uy + dz * uz) / len2
    t = np.minimum(np.maximum(t, 0.0), 1.0)
    cx, cy, cz = dx - t * ux, dy - t * uy, dz - t * uz
    dist = np.sqrt(cx * cx + cy * cy + cz * cz)
    return dist / (r0 + t * (r1 - r0))


def rasterize_brute(morph, dims, soft: bool) -> np.ndarray:
    """Evaluate every (voxel, capsule) pair over the full grid."""
    w, h, d = dims
    zz, yy, xx = np.meshgrid(np.arange(d, dtype=np.float64),
                             np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    if soft:
        acc = np.zeros((d, h, w), dtype=np.float64)
        for p0, p1, r0, r1 in capsules_of(morph):
            s = scaled_distance_brute(xx, yy, zz, p0, p1, r0, r1)
            acc = np.maximum(acc, np.clip(1.0 - s, 0.0, 1.0))
        return acc.astype(np.float32)
    smin = np.full((d, h, w), np.inf)
    for p0, p1, r0, r1 in capsules_of(morph):
        smin = np.minimum(smin, scaled_distance_brute(xx, yy, zz, p0, p1, r0, r1))
    return (smin <= 1.0).astype(np.float32)


def capsule_distance_sampled(p, p0, p1, r0, r1, samples: int = 100_000):
    """Min distance to the segment by dense sampling of t in [0, 1]."""
    t = np.linspace(0.0, 1.0, samples)
    pts = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
    d = np.sqrt(((np.asarray(p, dtype=np.float64)[None, :] - pts) ** 2).sum(axis=1))
    i = int(np.argmin(d))
    return float(d[i]), float(r0 + t[i] * (r1 - r0))


def surface_brute(mask: np.ndarray) -> list[tuple[int, int, int]]:
    """Foreground voxels with a background 6-neighbor (border = background)."""
    d, h, w = mask.shape
    out = []
    for z in range(d):
        for y in range(h):
            for x in range(w):
                if not mask[z, y, x]:
                    continue
                exposed = False
                for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                   (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    nz, ny, nx = z + dz, y + dy, x + dx
                    if not (0 <= nz < d and 0 <= ny < h and 0 <= nx < w):
                        exposed = True
                        break
                    if not mask[nz, ny, nx]:
                        exposed = True
                        break
                if exposed:
                    out.append((z, y, x))
    return out


def _directed_min_dists(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """All-pairs nearest distances from each src point to dst (chunked)."""
    out = np.empty(len(src))
    for start in range(0, len(src), 256):
        chunk = src[start:start + 256]
        d2 = ((chunk[:, None, :] - dst[None, :, :]) ** 2).sum(axis=2)
        out[start:start + 256] = np.sqrt(d2.min(axis=1))
    return out


def hd95_brute(a: np.ndarray, b: np.ndarray) -> float:
    sa = np.array(surface_brute(a), dtype=np.float64)
    sb = np.array(surface_brute(b), dtype=np.float64)
    pooled = np.concatenate([_directed_min_dists(sa, sb, ),
                             _directed_min_dists(sb, sa)])
    pooled = np.sort(pooled)
    return float(pooled[math.ceil(0.95 * pooled.size) - 1])


def dice_brute(a: np.ndarray, b: np.ndarray) -> float:
    na = nb = ni = 0
    for va, vb in zip(a.reshape(-1), b.reshape(-1)):
        na += bool(va)
        nb += bool(vb)
        ni += bool(va) and bool(vb)
    if na + nb == 0:
        return 1.0
    return 2.0 * ni / (na + nb)


def percentile_linear(values: np.ndarray, q: float) -> float:
    """Sorted linear-interpolation percentile, re-derived by hand."""
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    pos = (len(v) - 1) * q / 100.0
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    frac = pos - lo
    return float(v[lo] * (1.0 - frac) + v[hi] * frac)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    radius = int(3.0 * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def grid_origins(extent: int, stride: int) -> list[int]:
    out = []
    i = 0
    while i * stride < extent:
        out.append(i * stride)
        i += 1
    return out


def stitch_brute(pairs, dims) -> np.ndarray:
    """Per-voxel gather: f32 sums in sorted-origin block order."""
    w, h, d = dims
    ordered = sorted(pairs, key=lambda p: (p[0][2], p[0][1], p[0][0]))
    out = np.zeros((d, h, w), dtype=np.float32)
    for z in range(d):
        for y in range(h):
            for x in range(w):
                acc = np.float32(0.0)
                cnt = np.float32(0.0)
                for (x0, y0, z0), data in ordered:
                    bd, bh, bw = data.shape
                    if x0 <= x < x0 + bw and y0 <= y < y0 + bh and z0 <= z < z0 + bd:
                        acc = acc + data[z - z0, y - y0, x - x0]
                        cnt = cnt + np.float32(1.0)
                out[z, y, x] = acc / cnt
    return out


def patch_embed_brute_2d(image, w, b):
    """Per-token (c, py, px) sequential f32 accumulation."""
    e, c, p, _ = w.shape
    gh, gw = image.shape[1] // p, image.shape[2] // p
    out = np.zeros((gh * gw, e), dtype=np.float32)
    for i in range(gh):
        for j in range(gw):
            for ei in range(e):
                acc = np.float32(0.0)
                for ci in range(c):
                    for py in range(p):
                        for px in range(p):
                            acc = acc + w[ei, ci, py, px] * image[ci, i * p + py, j * p + px]
                out[i * gw + j, ei] = acc + b[ei]
    return out


def patch_embed_brute_3d(block, w, b):
    e, c, d, p, _ = w.shape
    gh, gw = block.shape[2] // p, block.shape[3] // p
    out = np.zeros((gh * gw, e), dtype=np.float32)
    for i in range(gh):
        for j in range(gw):
            for ei in range(e):
                acc = np.float32(0.0)
                for ci in range(c):
                    for di in range(d):
                        for py in range(p):
                            for px in range(p):
                                acc = acc + w[ei, ci, di, py, px] * block[ci, di, i * p + py, j * p + px]
                out[i * gw + j, ei] = acc + b[ei]
    return out
