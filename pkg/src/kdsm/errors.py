"""Exception hierarchy shared by all kdsm modules."""


class KDSMError(Exception):
    """Base class for all library errors."""


class InvalidInputError(KDSMError, ValueError):
    """Malformed, empty, non-finite or mis-shaped input."""


class DomainError(KDSMError, ValueError):
    """Argument outside the mathematical domain of a function."""


class DegenerateFeatureError(KDSMError, ValueError):
    """A feature has (numerically) zero variance."""


class NumericError(KDSMError, ArithmeticError):
    """Iteration failed to converge or produced a non-finite value."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class StateError(KDSMError, RuntimeError):
    """Object is not in the state required by the operation."""
