"""Exception types shared across the package.

Everything raised deliberately by pointreg derives from ``PointregError`` so
callers (and the HTTP service) can distinguish domain failures from bugs.
"""


class PointregError(Exception):
    """Base class for all errors raised by this package."""


class AngleNearPi(PointregError):
    """Rotation angle is within the exclusion band around 180 degrees.

    The matrix logarithm of a rotation is not unique at exactly 180 degrees
    and is ill-conditioned nearby, so ``log_map`` refuses to guess.
    """


class ParseError(PointregError):
    """A text input (OFF mesh, XYZ cloud, CSV) could not be parsed.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(PointregError):
    """A binary input (weight file) is malformed, truncated, or corrupt."""


class DimensionMismatch(PointregError):
    """Array shapes or layer sizes do not chain together."""


class DegenerateMesh(PointregError):
    """Mesh has no faces with positive area, so it cannot be sampled."""


class DegenerateCloud(PointregError):
    """Point cloud collapses to a point (zero extent) or is empty."""


class EmptyVisibleSet(PointregError):
    """A visibility filter removed every point of a cloud."""


class NumericalFailure(PointregError):
    """A numerical routine (SVD) failed to converge on otherwise-valid input."""


class DegenerateConfiguration(PointregError):
    """Point correspondences do not determine a rigid motion.

    Raised by the rigid least-squares fit when there are fewer than three
    pairs or the paired points are collinear/coincident.
    """
