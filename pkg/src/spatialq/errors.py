"""Exception hierarchy shared by the pipeline and the command line."""


class SpatialQError(Exception):
    """Base class for every error raised by this package."""


class DataError(SpatialQError, ValueError):
    """Malformed input data: wrong shapes, bad files, inconsistent configs."""


class NumericalError(SpatialQError, ArithmeticError):
    """Non-finite values or divergence during computation."""
