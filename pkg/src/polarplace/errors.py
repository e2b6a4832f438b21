"""Exception types raised across the package."""


class PolarPlaceError(Exception):
    """Base class for all errors raised by polarplace."""


class MissingFile(PolarPlaceError, FileNotFoundError):
    pass


class MalformedRecord(PolarPlaceError, ValueError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class NonFiniteCoordinate(PolarPlaceError, ValueError):
    pass


class PointOutOfBounds(PolarPlaceError, ValueError):
    pass


class ShapeMismatch(PolarPlaceError, ValueError):
    pass


class CropTooLarge(PolarPlaceError, ValueError):
    pass


class LengthMismatch(PolarPlaceError, ValueError):
    pass


class DegenerateDistribution(PolarPlaceError, ValueError):
    """The correlation vector is too flat to carry an orientation signal."""

    def __init__(self, sharpness, threshold):
        self.sharpness = sharpness
        self.threshold = threshold
        super().__init__(
            f"peak sharpness {sharpness:.6g} below threshold {threshold:.6g}")


class ZeroProbabilityAtTarget(PolarPlaceError, ValueError):
    pass


class NTooLarge(PolarPlaceError, ValueError):
    pass


class DuplicateId(PolarPlaceError, KeyError):
    pass


class EmptyDatabase(PolarPlaceError, LookupError):
    pass


class NonFiniteLoss(PolarPlaceError, FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, epoch, step, diagnostics):
        self.epoch = epoch
        self.step = step
        self.diagnostics = diagnostics
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}: {diagnostics}")


class ConfigError(PolarPlaceError, ValueError):
    pass


class FormatError(PolarPlaceError, ValueError):
    """A binary file does not match its declared layout."""
