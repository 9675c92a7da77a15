"""SWC neuron morphology parsing, writing, and tree geometry.

SWC is the standard text format for neuron morphologies: one node per
line with 7 whitespace-separated fields (id, type, x, y, z, radius,
parent id).  Coordinates are interpreted in voxel units throughout the
toolkit.  `type_code` is carried verbatim and never interpreted.

Nodes may appear before their parents; structural validation (parent
resolution, forest check) runs after the whole file is parsed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CycleDetected,
    DanglingParent,
    DuplicateId,
    EmptyMorphology,
    MalformedLine,
    NonPositiveRadius,
)

ROOT_PARENT = -1


@dataclass(frozen=True)
class SwcNode:
    id: int
    type_code: int
    x: float
    y: float
    z: float
    radius: float
    parent_id: int

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass
class SwcMorphology:
    nodes: list[SwcNode] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)

    def by_id(self) -> dict[int, SwcNode]:
        return {n.id: n for n in self.nodes}

    def roots(self) -> list[SwcNode]:
        return [n for n in self.nodes if n.parent_id == ROOT_PARENT]


@dataclass
class CapsuleSegment:
    """Tapered capsule between two tree nodes (or a sphere when p0 == p1)."""

    p0: np.ndarray
    p1: np.ndarray
    r0: float
    r1: float

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=np.float64)
        self.p1 = np.asarray(self.p1, dtype=np.float64)
        if self.r0 <= 0 or self.r1 <= 0:
            raise NonPositiveRadius(-1, -1, min(self.r0, self.r1))


def _f32(value: float) -> float:
    return float(np.float32(value))


def parse_swc(text: str) -> SwcMorphology:
    """Parse SWC text. Comments ('#') and blank lines are skipped.

    Raises MalformedLine, DuplicateId, NonPositiveRadius (line-scoped),
    and DanglingParent / CycleDetected after the full parse.
    """
    nodes: list[SwcNode] = []
    seen: set[int] = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 7:
            raise MalformedLine(line_no, f"expected 7 fields, got {len(fields)}")
        try:
            node_id = int(fields[0])
            type_code = int(fields[1])
            x, y, z = (_f32(float(v)) for v in fields[2:5])
            radius = _f32(float(fields[5]))
            parent_id = int(fields[6])
        except ValueError as exc:
            raise MalformedLine(line_no, f"unparsable number: {exc}") from None
        if node_id < 1:
            raise MalformedLine(line_no, f"node id must be >= 1, got {node_id}")
        if node_id in seen:
            raise DuplicateId(line_no, node_id)
        if radius <= 0:
            raise NonPositiveRadius(line_no, node_id, radius)
        seen.add(node_id)
        nodes.append(SwcNode(node_id, type_code, x, y, z, radius, parent_id))

    morphology = SwcMorphology(nodes)
    _validate_structure(morphology)
    return morphology


def _validate_structure(m: SwcMorphology) -> None:
    index = m.by_id()
    for node in m.nodes:
        if node.parent_id != ROOT_PARENT and node.parent_id not in index:
            raise DanglingParent(node.id, node.parent_id)
    # Forest check: walk parent links with three-color marking.
    state: dict[int, int] = {}  # 1 = on current path, 2 = known good
    for node in m.nodes:
        path = []
        cur = node.id
        while cur != ROOT_PARENT and state.get(cur, 0) != 2:
            if state.get(cur) == 1:
                raise CycleDetected(cur)
            state[cur] = 1
            path.append(cur)
            cur = index[cur].parent_id
        for nid in path:
            state[nid] = 2


def write_swc(m: SwcMorphology) -> str:
    """One data line per node in stored order; floats printed with enough
    digits to round-trip exactly as f32."""
    lines = []
    for n in m.nodes:
        coords = " ".join(_fmt(v) for v in (n.x, n.y, n.z, n.radius))
        lines.append(f"{n.id} {n.type_code} {coords} {n.parent_id}")
    return "\n".join(lines) + ("\n" if lines else "")


def _fmt(value: float) -> str:
    return np.format_float_positional(np.float32(value), unique=True, trim="-")


def segments(m: SwcMorphology) -> list[CapsuleSegment]:
    """One capsule per non-root node, from parent to child.

    Isolated roots contribute no segments here; rasterization treats every
    root as a sphere separately.
    """
    index = m.by_id()
    out = []
    for node in m.nodes:
        if node.parent_id == ROOT_PARENT:
            continue
        parent = index[node.parent_id]
        out.append(CapsuleSegment(parent.position(), node.position(), parent.radius, node.radius))
    return out


def bounding_box(m: SwcMorphology, margin: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box covering every node's sphere, expanded by margin."""
    if not m.nodes:
        raise EmptyMorphology("bounding_box of empty morphology")
    centers = np.array([[n.x, n.y, n.z] for n in m.nodes], dtype=np.float64)
    radii = np.array([n.radius for n in m.nodes], dtype=np.float64)[:, None]
    lo = (centers - radii).min(axis=0) - margin
    hi = (centers + radii).max(axis=0) + margin
    return lo, hi
