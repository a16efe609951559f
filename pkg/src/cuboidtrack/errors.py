"""Exception types shared across the package."""


class CuboidTrackError(Exception):
    """Base class for all package errors."""


class NonPositiveDepth(CuboidTrackError, ValueError):
    """A point lies on or behind the camera plane (z <= 0)."""


class NonPositiveUncertainty(CuboidTrackError, ValueError):
    pass


class EmptyInput(CuboidTrackError, ValueError):
    pass


class EmptyWindow(CuboidTrackError, ValueError):
    """No frame index satisfies the pairing window constraint."""


class Degenerate(CuboidTrackError, ValueError):
    """PnP problem is underdetermined (too few or collinear points)."""


class MissingGroundTruth(CuboidTrackError, ValueError):
    pass


class TooFewFrames(CuboidTrackError, ValueError):
    pass


class DegenerateHeading(CuboidTrackError, ValueError):
    """Forward axis is (anti)parallel to the up axis, so heading is undefined."""
