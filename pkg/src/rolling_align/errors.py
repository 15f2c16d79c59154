"""Exception types raised across the package."""


class RollingAlignError(Exception):
    """Base class for all package errors."""


class DegenerateValue(RollingAlignError, ValueError):
    """A value is too close to zero or a spread is too small to proceed."""


class InvalidSchedule(RollingAlignError, ValueError):
    pass


class NonFinite(RollingAlignError, FloatingPointError):
    """Objective or gradient became non-finite during optimization."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class HookFailure(RollingAlignError, RuntimeError):
    pass


class SingularFit(RollingAlignError, ValueError):
    pass


class EmptyMask(RollingAlignError, ValueError):
    pass


class InvalidSpec(RollingAlignError, ValueError):
    pass


class ManifestMismatch(RollingAlignError, ValueError):
    """Snippet directory contents disagree with the manifest or schedule."""
