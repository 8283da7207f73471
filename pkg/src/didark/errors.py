"""Exception hierarchy shared across the package."""


class DidError(Exception):
    """Base class for all package errors."""


class DomainError(DidError, ValueError):
    """An image carries the wrong color-domain tag, or values outside the domain."""


class ArgumentError(DidError, ValueError):
    """Invalid sizes, ranges, or option combinations."""


class FitError(DidError, ValueError):
    """Normalization statistics cannot be estimated from the sample."""


class NumericError(DidError, ArithmeticError):
    """A non-finite value appeared during sampling or training."""


class CheckpointError(DidError, IOError):
    """A checkpoint file is corrupt, truncated, or inconsistent."""

    def __init__(self, section: str, message: str):
        super().__init__(f"[{section}] {message}")
        self.section = section


class IngestionError(DidError, IOError):
    """A paired dataset directory is malformed."""
