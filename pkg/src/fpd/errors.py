"""Exception types raised across the package."""


class FPDError(Exception):
    """Base class for all package errors."""


class NonFiniteError(FPDError, ValueError):
    pass


class DegenerateVector(FPDError, ValueError):
    """A vector with zero norm was given where a direction is needed."""


class DegenerateMatrix(FPDError, ValueError):
    """A centered matrix with no spread (all rows zero)."""


class ClusterError(FPDError, ValueError):
    pass


class EmptyAggregation(FPDError, ValueError):
    pass


class FormatError(FPDError, ValueError):
    """Malformed IDX file."""


class ConfigError(FPDError, ValueError):
    """Invalid experiment configuration. ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class TrainError(FPDError, ValueError):
    pass


class EvalError(FPDError, ValueError):
    pass


class AttackError(FPDError, ValueError):
    pass
