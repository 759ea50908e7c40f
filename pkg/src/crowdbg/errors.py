"""Exception types shared across the package."""


class CrowdBGError(Exception):
    """Base class for all crowdbg errors."""


class GridShapeError(CrowdBGError, ValueError):
    """Two grids (or a grid and an aligned list) disagree on dimensions."""


class ParameterError(CrowdBGError, ValueError):
    """A configuration value is outside its valid range."""


class FileFormatError(CrowdBGError, ValueError):
    """A binary grid or model file is malformed.

    Carries the byte offset at which the problem was detected.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class AnnotationParseError(CrowdBGError, ValueError):
    """An annotation or detection record could not be parsed."""


class ManifestError(CrowdBGError, ValueError):
    """A dataset manifest is malformed or points at missing files."""


class NumericError(CrowdBGError, ArithmeticError):
    """A computation produced or received non-finite values."""


class NegativeDensityWarning(UserWarning):
    """A density map loaded from disk contains negative values."""
