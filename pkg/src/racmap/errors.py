"""Exception types shared across the package."""


class RacmapError(Exception):
    """Base class for all racmap errors."""


class InvalidInputError(RacmapError):
    """Input data violates a documented precondition."""


class OutOfDomainError(InvalidInputError):
    """A point falls outside the standardized grid after transformation."""

    def __init__(self, point, message=None):
        self.point = tuple(point)
        super().__init__(message or f"point {self.point} is outside the grid domain")


class InvalidLayoutError(InvalidInputError):
    """A region layout does not tile the grid (gaps or overlaps)."""

    def __init__(self, message, offending_pixels=None):
        self.offending_pixels = list(offending_pixels or [])
        super().__init__(message)


class InvalidStateError(RacmapError):
    """An operation was requested on an object missing required state."""


class ConvergenceError(RacmapError):
    """An iterative fit failed to converge; carries the iteration trace."""

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class SingularFitError(RacmapError):
    """The information matrix (or design) is singular at the fit."""
