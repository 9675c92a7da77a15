"""Exception types shared across the toolkit.

Grouped by subsystem so the CLI can map them onto exit codes: anything
under NeurosegError that is not a NumericError counts as a data error.
"""


class NeurosegError(Exception):
    """Base class for every error raised by this package."""


# -- SWC parsing / validation ------------------------------------------------

class SwcError(NeurosegError):
    pass


class MalformedLine(SwcError):
    """Wrong field count or an unparsable number on a data line."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NonPositiveRadius(SwcError):
    def __init__(self, line_no: int, node_id: int, radius: float):
        super().__init__(f"line {line_no}: node {node_id} has radius {radius} (must be > 0)")
        self.line_no = line_no
        self.node_id = node_id


class DuplicateId(SwcError):
    def __init__(self, line_no: int, node_id: int):
        super().__init__(f"line {line_no}: duplicate node id {node_id}")
        self.line_no = line_no
        self.node_id = node_id


class DanglingParent(SwcError):
    def __init__(self, node_id: int, parent_id: int):
        super().__init__(f"node {node_id} references missing parent {parent_id}")
        self.node_id = node_id
        self.parent_id = parent_id


class CycleDetected(SwcError):
    def __init__(self, node_id: int):
        super().__init__(f"parent links form a cycle through node {node_id}")
        self.node_id = node_id


class EmptyMorphology(SwcError):
    pass


# -- Volume container / raw I/O ----------------------------------------------

class VolumeError(NeurosegError):
    pass


class BadMeta(VolumeError):
    pass


class UnsupportedDtype(VolumeError):
    pass


class SizeMismatch(VolumeError):
    pass


class CoverageGap(VolumeError):
    """A stitched voxel was covered by no block."""


class AlignmentMismatch(VolumeError):
    """Image/label block lists do not pair up by origin."""


# -- Tensor ops / model shapes -------------------------------------------------

class ShapeMismatch(NeurosegError):
    pass


class BadHeadCount(NeurosegError):
    pass


class NonSquareGrid(NeurosegError):
    pass


# -- Weight transfer / archives -------------------------------------------------

class BadDepth(NeurosegError):
    pass


class BadChannels(NeurosegError):
    pass


class MissingTensor(NeurosegError):
    def __init__(self, name: str):
        super().__init__(f"archive is missing tensor {name!r}")
        self.name = name


class DimMismatch(NeurosegError):
    pass


class ArchiveError(NeurosegError):
    pass


class BadMagic(ArchiveError):
    pass


class UnsupportedVersion(ArchiveError):
    def __init__(self, version: int):
        super().__init__(f"unsupported archive version {version}")
        self.version = version


class Truncated(ArchiveError):
    pass


class DuplicateName(ArchiveError):
    def __init__(self, name: str):
        super().__init__(f"duplicate tensor name {name!r}")
        self.name = name


# -- Training / evaluation -----------------------------------------------------

class NumericError(NeurosegError):
    """Numeric failures (NaN/Inf); mapped to a distinct CLI exit code."""


class NonFiniteLoss(NumericError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class NonFiniteValue(NumericError):
    """Raised by debug-mode finiteness checks inside tensor ops."""


class EmptyDataset(NeurosegError):
    pass


class EmptyMask(NeurosegError):
    pass
