"""Exception types shared across the package."""


class MotifRankError(Exception):
    """Base class for all package errors."""


class DimensionError(MotifRankError, ValueError):
    pass


class NumericalError(MotifRankError, ArithmeticError):
    """A NaN or Inf appeared where only finite values are allowed."""


class TapeUsageError(MotifRankError, RuntimeError):
    pass


class GraphError(MotifRankError, ValueError):
    pass


class ValidationError(MotifRankError, ValueError):
    """Malformed input file or configuration."""


class MetricError(MotifRankError, ValueError):
    pass
