"""Exception types raised across the package."""


class AdvrotError(Exception):
    """Base class for all package errors."""


class DimensionError(AdvrotError, ValueError):
    """Tensor shapes do not fit the operation."""


class ValidationError(AdvrotError, ValueError):
    """An argument or config value violates its contract."""


class FormatError(AdvrotError, ValueError):
    """A binary file has the wrong magic number or version."""


class TruncationError(FormatError):
    """A binary file is shorter than its header promises."""


class ArchitectureError(FormatError):
    """A checkpoint was written for a different layer roster."""


class TrainingError(AdvrotError, RuntimeError):
    """Training diverged (non-finite loss)."""
