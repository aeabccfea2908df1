"""Exception types raised by the viewfuse pipeline."""


class ViewFuseError(Exception):
    """Base class for all viewfuse errors."""


class InvalidDepthError(ViewFuseError):
    """Depth value is non-positive or non-finite where a valid depth is required."""


class DimensionMismatchError(ViewFuseError):
    """Array sizes disagree with each other or with the camera model."""


class MissingFileError(ViewFuseError):
    """A required file in a bundle directory does not exist."""


class MalformedHeaderError(ViewFuseError):
    """A binary container has a bad magic string or inconsistent header fields."""


class EmptyMeshError(ViewFuseError):
    """Mesh has no vertices or no triangles where geometry is required."""


class EmptyCloudError(ViewFuseError):
    """Point cloud is empty where points are required."""


class BackendError(ViewFuseError):
    """An inpainting backend failed (bad output size, nonzero exit, missing input)."""


class UnfillableHoleError(ViewFuseError):
    """A hole has no valid depth in its surrounding band; caller may retry later."""


class SuspectedMisalignmentError(ViewFuseError):
    """Almost no clutter vertex is depth-consistent in any view; coordinate frames
    of mesh and captures likely disagree."""


class GridTooLargeError(ViewFuseError):
    """Voxel grid implied by scene bounds exceeds the configured memory cap."""


class ConfigError(ViewFuseError):
    """Invalid configuration value."""
