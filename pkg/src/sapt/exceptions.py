"""Exception and warning types shared across the package."""


class ValidationError(ValueError):
    """Input data or configuration violates a structural requirement."""


class NumericError(RuntimeError):
    """A numerical operation failed (singular system, eigensolver breakdown)."""


class DemeanWarning(UserWarning):
    """Raised when moment computations receive data not flagged as demeaned."""
