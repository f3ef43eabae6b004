"""Exception hierarchy shared across the package."""


class SemidensError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SemidensError):
    """Invalid user configuration: unknown family, bad sizes, malformed specs."""


class DegenerateInputError(SemidensError):
    """Inputs that make an operation ill-posed (duplicate knots, zero spread, ...)."""


class NumericalError(SemidensError):
    """A linear system or score could not be evaluated reliably."""


class EstimationError(SemidensError):
    """An estimation procedure failed to produce a usable result."""
