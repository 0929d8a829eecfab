"""Exception types shared across the package."""


class HgnnMtlError(Exception):
    """Base class for package-specific errors."""


class ShapeError(HgnnMtlError, ValueError):
    """Operands have incompatible or invalid dimensions."""


class UsageError(HgnnMtlError, ValueError):
    """An operation was invoked with invalid arguments or in the wrong mode."""


class ParseError(HgnnMtlError, ValueError):
    """A data file violates the expected schema."""


class SplitError(UsageError):
    """A train/test split cannot satisfy the per-stratum minimums."""


class MissingClassError(HgnnMtlError, ValueError):
    """A class required for pooling has no samples in the pooled set."""


class NumericError(HgnnMtlError, ArithmeticError):
    """A numeric operation produced non-finite values."""


class ConditioningError(HgnnMtlError, ArithmeticError):
    """A linear system is too ill-conditioned to solve reliably."""
