"""Exception types shared across the package.

Everything raised on purpose derives from FoilnetError so callers can
catch one base class at CLI boundaries and turn it into an exit code.
"""


class FoilnetError(Exception):
    pass


class MalformedLine(FoilnetError):
    """A coordinate line that does not parse as two plausible floats."""


class TooFewPoints(FoilnetError):
    """Fewer than 3 distinct polygon points after cleanup."""


class SelfIntersecting(FoilnetError):
    """Polygon outline crosses itself."""


class OutOfRange(FoilnetError):
    """A numeric argument outside its documented domain."""


class EmptyMask(FoilnetError):
    """Rasterization produced no usable interior cells."""


class BadGeometry(FoilnetError):
    """Panel geometry that cannot be solved (degenerate panels etc.)."""


class SingularSystem(FoilnetError):
    """The panel influence system is numerically singular."""


class NonFinite(FoilnetError):
    """A computed field contains NaN or inf."""


class ZeroMagnitude(FoilnetError):
    """A freestream with |v| = 0 where a direction or scale is required."""


class DegenerateChannel(FoilnetError):
    """A normalization channel whose training data is identically zero."""


class OverlappingShapes(FoilnetError):
    """A shape appears on both sides of the train/test wall."""


class ShapeMismatch(FoilnetError):
    """Array shapes (or file headers) disagree with what was expected."""


class NotScalar(FoilnetError):
    """backward() called on a tensor that is not a scalar."""


class ConfigInvalid(FoilnetError):
    """A configuration value violates its documented constraints."""


class DatasetMissing(FoilnetError):
    """A dataset manifest or sample file is absent or unreadable."""


class Diverged(FoilnetError):
    """Training loss became non-finite."""


class NoAirfoils(FoilnetError):
    """No usable airfoil files were found (or a sample slot starved)."""


class ZeroTargetNorm(FoilnetError):
    """Relative error is undefined because the target sums to zero."""


class IoFailure(FoilnetError):
    """An image or report file could not be written."""
