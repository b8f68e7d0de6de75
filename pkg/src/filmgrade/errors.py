"""Typed errors shared across the package.

Everything raised on bad data or bad files derives from FilmgradeError so
the CLI can map the whole family to exit code 2.
"""


class FilmgradeError(Exception):
    """Base class for all data and format errors raised by filmgrade."""


class ChannelError(FilmgradeError):
    """A color operation received an image with an unsupported channel count."""


class DimensionError(FilmgradeError):
    """Image dimensions are inconsistent, indivisible, or otherwise invalid."""


class PngFormatError(FilmgradeError):
    """The PNG file is missing required features or uses an unsupported variant."""


class CubeFormatError(FilmgradeError):
    """A .cube LUT file is malformed."""


class WeightFormatError(FilmgradeError):
    """A weight container file is malformed, truncated, or incomplete."""


class FitDivergedError(FilmgradeError):
    """Optimization produced a non-finite loss value.

    Carries the training trace accumulated up to the failing iteration.
    """

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace
