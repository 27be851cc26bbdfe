"""Exception types shared across the package."""


class SgmapError(Exception):
    """Base class for all package-specific errors."""


class EmptyPointSet(SgmapError):
    """An operation that needs at least one point received none."""


class DegenerateGeometry(SgmapError):
    """Point set is too small or too flat for the requested fit."""


class InvalidLabel(SgmapError):
    """A label argument was outside its valid range (e.g. the reserved 0)."""


class ShapeError(SgmapError):
    """Vector or matrix dimensions do not match the declared contract."""


class NoObservations(SgmapError):
    """A multi-view aggregate was requested for an entity with zero views."""


class InvalidRoi(SgmapError):
    """A region of interest is empty or outside the image bounds."""


class DivergenceError(SgmapError):
    """Training or fusion produced a non-finite value."""


class EmptyInput(SgmapError):
    """A metric received an empty point cloud."""


class SceneSpecError(SgmapError):
    """A synthetic scene description is inconsistent or out of range."""
