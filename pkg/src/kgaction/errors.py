"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit 2, numeric
failures exit 3.
"""


class KgError(Exception):
    """Base class for all package errors."""


class ValidationError(KgError, ValueError):
    """Input data violates a documented contract."""


class DimensionError(ValidationError):
    """Array shapes do not line up."""


class NumericError(KgError, ArithmeticError):
    """A computation produced or received a non-finite value."""
