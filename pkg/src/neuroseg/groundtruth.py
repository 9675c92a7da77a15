"""Label rasterization and synthetic neuron volumes.

Labels come from a scale-normalized distance: for a voxel center at
distance `dist` from a tapered capsule whose local radius is `r_at`,
the score is s = dist / r_at.  Binary labels mark s <= 1; soft labels
take the per-capsule maximum of clamp(1 - s, 0, 1).  Every tree root
additionally contributes a sphere (a degenerate capsule).

The synthetic generator grows seeded random-walk trees, rasterizes
them, and renders images with a Gaussian PSF plus Gaussian noise, so
experiments are reproducible end to end from a single seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import BadMeta, EmptyMorphology
from .rng import Rng, derive
from .swc import CapsuleSegment, SwcMorphology, SwcNode, segments
from .volume import Volume3D

_TREE_KEY = 0x7472
_NOISE_KEY = 0x6E7A


class LabelMode(enum.Enum):
    BINARY = "binary"
    SOFT = "soft"


@dataclass
class SynthParams:
    # Defaults are the desk-scale benchmark regime: thin, dim, noisy
    # neurites whose segmentation is not solvable by pure thresholding.
    seed: int = 7
    dims: tuple[int, int, int] = (64, 64, 15)  # (W, H, D)
    n_trees: int = 2
    steps: int = 60
    step_len: float = 2.0
    branch_prob: float = 0.15
    radius_range: tuple[float, float] = (0.8, 2.0)  # (tip, root)
    noise_sigma: float = 0.12
    psf_sigma: float = 0.8
    foreground_intensity: float = 0.55
    background_intensity: float = 0.3

    def __post_init__(self):
        if any(d <= 0 for d in self.dims):
            raise BadMeta(f"dims must be positive, got {self.dims}")
        lo, hi = self.radius_range
        if lo <= 0 or hi <= 0:
            raise BadMeta(f"radius_range must be positive, got {self.radius_range}")
        if not 0.0 <= self.branch_prob <= 1.0:
            raise BadMeta(f"branch_prob must be in [0, 1], got {self.branch_prob}")
        if self.steps < 0 or self.n_trees < 1 or self.step_len <= 0:
            raise BadMeta("steps must be >= 0, n_trees >= 1, step_len > 0")
        if self.noise_sigma < 0 or self.psf_sigma < 0:
            raise BadMeta("sigmas must be >= 0")


def distance_to_capsule(p, seg: CapsuleSegment) -> tuple[float, float]:
    """Distance from point `p` to the capsule axis and the radius there.

    Degenerate segments (p0 == p1) fall back to point distance with
    r_at = max(r0, r1).
    """
    px, py, pz = (float(v) for v in p)
    dx, dy, dz = px - seg.p0[0], py - seg.p0[1], pz - seg.p0[2]
    ux, uy, uz = seg.p1[0] - seg.p0[0], seg.p1[1] - seg.p0[1], seg.p1[2] - seg.p0[2]
    len2 = ux * ux + uy * uy + uz * uz
    if len2 == 0.0:
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        return dist, max(seg.r0, seg.r1)
    t = (dx * ux + dy * uy + dz * uz) / len2
    t = min(max(t, 0.0), 1.0)
    cx, cy, cz = dx - t * ux, dy - t * uy, dz - t * uz
    dist = math.sqrt(cx * cx + cy * cy + cz * cz)
    return dist, seg.r0 + t * (seg.r1 - seg.r0)


def _capsules(m: SwcMorphology) -> list[CapsuleSegment]:
    # Every root contributes a sphere; edges contribute tapered capsules.
    caps = [CapsuleSegment(r.position(), r.position(), r.radius, r.radius) for r in m.roots()]
    caps.extend(segments(m))
    return caps


def rasterize_labels(m: SwcMorphology, dims: tuple[int, int, int], mode: LabelMode) -> Volume3D:
    """Rasterize a morphology onto the (W, H, D) voxel grid.

    Voxel centers sit at integer coordinates.  Each capsule only touches
    voxels within max(r0, r1) of its bounding box, so work is cropped per
    segment; the result is identical to evaluating every (voxel, segment)
    pair.
    """
    if not m.nodes:
        raise EmptyMorphology("cannot rasterize an empty morphology")
    w, h, d = dims
    if mode is LabelMode.BINARY:
        field = np.full((d, h, w), np.inf, dtype=np.float64)  # min of s
    else:
        field = np.zeros((d, h, w), dtype=np.float64)  # max of clamp(1 - s)

    for seg in _capsules(m):
        rmax = max(seg.r0, seg.r1)
        lo = np.floor(np.minimum(seg.p0, seg.p1) - rmax).astype(int)
        hi = np.ceil(np.maximum(seg.p0, seg.p1) + rmax).astype(int)
        x0, y0, z0 = np.maximum(lo, 0)
        x1, y1, z1 = np.minimum(hi, np.array([w, h, d]) - 1)
        if x0 > x1 or y0 > y1 or z0 > z1:
            continue
        zz, yy, xx = np.meshgrid(
            np.arange(z0, z1 + 1, dtype=np.float64),
            np.arange(y0, y1 + 1, dtype=np.float64),
            np.arange(x0, x1 + 1, dtype=np.float64),
            indexing="ij",
        )
        s = _scaled_distance(xx, yy, zz, seg)
        view = field[z0:z1 + 1, y0:y1 + 1, x0:x1 + 1]
        if mode is LabelMode.BINARY:
            np.minimum(view, s, out=view)
        else:
            np.maximum(view, np.clip(1.0 - s, 0.0, 1.0), out=view)

    if mode is LabelMode.BINARY:
        return Volume3D((field <= 1.0).astype(np.float32))
    return Volume3D(field.astype(np.float32))


def _scaled_distance(xx, yy, zz, seg: CapsuleSegment):
    # Same operation order as distance_to_capsule so both agree bit-for-bit.
    dx, dy, dz = xx - seg.p0[0], yy - seg.p0[1], zz - seg.p0[2]
    ux, uy, uz = seg.p1[0] - seg.p0[0], seg.p1[1] - seg.p0[1], seg.p1[2] - seg.p0[2]
    len2 = ux * ux + uy * uy + uz * uz
    if len2 == 0.0:
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        r_at = max(seg.r0, seg.r1)
        return dist / r_at
    t = (dx * ux + dy * uy + dz * uz) / len2
    t = np.minimum(np.maximum(t, 0.0), 1.0)
    cx, cy, cz = dx - t * ux, dy - t * uy, dz - t * uz
    dist = np.sqrt(cx * cx + cy * cy + cz * cz)
    r_at = seg.r0 + t * (seg.r1 - seg.r0)
    return dist / r_at


def _f32(v: float) -> float:
    return float(np.float32(v))


def _unit(rng: Rng) -> np.ndarray:
    while True:
        v = rng.normal_array((3,))
        n = math.sqrt(float(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
        if n > 1e-8:
            return v / n


def generate_random_tree(params: SynthParams, tree_index: int) -> SwcMorphology:
    """Seeded random-walk tree; deterministic in (params.seed, tree_index).

    branch_prob = 0 yields a path with steps + 1 nodes; branching re-roots
    the walker at a random earlier node, so the node count is always
    steps + 1.
    """
    rng = Rng(derive(params.seed, _TREE_KEY, tree_index))
    w, h, d = params.dims
    dims = np.array([w, h, d], dtype=np.float64)
    r_lo, r_hi = params.radius_range

    pos = np.array([rng.uniform(0.1 * (dims[i] - 1.0), 0.9 * (dims[i] - 1.0))
                    for i in range(3)])
    nodes = [SwcNode(1, 0, _f32(pos[0]), _f32(pos[1]), _f32(pos[2]), _f32(r_hi), -1)]
    heading = _unit(rng)
    cur = 0  # index into nodes

    for step in range(1, params.steps + 1):
        if len(nodes) >= 2 and rng.uniform() < params.branch_prob:
            cur = rng.randint(len(nodes))
            heading = _unit(rng)
        heading = heading + 0.5 * rng.uniform_array((3,), -1.0, 1.0)
        n = math.sqrt(float((heading * heading).sum()))
        heading = _unit(rng) if n < 1e-8 else heading / n
        parent = nodes[cur]
        new = np.array([parent.x, parent.y, parent.z]) + params.step_len * heading
        new = np.minimum(np.maximum(new, 0.0), dims - 1.0)
        frac = step / params.steps if params.steps else 0.0
        radius = r_hi + (r_lo - r_hi) * frac
        nodes.append(SwcNode(len(nodes) + 1, 0, _f32(new[0]), _f32(new[1]), _f32(new[2]),
                             _f32(radius), parent.id))
        cur = len(nodes) - 1
    return SwcMorphology(nodes)


def synth_morphology(params: SynthParams) -> SwcMorphology:
    """n_trees random trees merged into one multi-root morphology."""
    nodes: list[SwcNode] = []
    offset = 0
    for t in range(params.n_trees):
        tree = generate_random_tree(params, t)
        for n in tree.nodes:
            parent = n.parent_id if n.parent_id == -1 else n.parent_id + offset
            nodes.append(replace(n, id=n.id + offset, parent_id=parent))
        offset += len(tree.nodes)
    return SwcMorphology(nodes)


def render_image(m: SwcMorphology, params: SynthParams) -> Volume3D:
    """Binary mask scaled to intensities, blurred by a separable Gaussian
    PSF (truncated at 3 sigma, reflective borders), plus seeded noise."""
    mask = rasterize_labels(m, params.dims, LabelMode.BINARY).data
    img = params.background_intensity + (
        params.foreground_intensity - params.background_intensity) * mask
    img = img.astype(np.float32)
    if params.psf_sigma > 0:
        img = ndimage.gaussian_filter(img, sigma=params.psf_sigma,
                                      mode="reflect", truncate=3.0).astype(np.float32)
    if params.noise_sigma > 0:
        rng = Rng(derive(params.seed, _NOISE_KEY))
        noise = rng.normal_array(img.shape, sigma=params.noise_sigma)
        img = (img + noise.astype(np.float32)).astype(np.float32)
    return Volume3D(np.clip(img, 0.0, 1.0))


def synth_volume(params: SynthParams):
    """(image, binary labels, morphology) for one synthetic volume."""
    m = synth_morphology(params)
    labels = rasterize_labels(m, params.dims, LabelMode.BINARY)
    image = render_image(m, params)
    return image, labels, m
