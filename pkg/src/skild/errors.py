"""Exception types shared across the package."""


class SkildError(Exception):
    """Base class for all package errors."""


class ValidationError(SkildError, ValueError):
    """Bad input: wrong shape, out-of-range parameter, malformed config."""


class NumericalError(SkildError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""
