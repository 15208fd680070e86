"""Exception hierarchy shared by every module."""

from __future__ import annotations


class OUHardyError(Exception):
    """Base class for all package errors."""


class ConfigError(OUHardyError, ValueError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class DimensionError(ConfigError):
    pass


class DefiniteMatrixError(ConfigError):
    pass


class GeometryError(ConfigError):
    pass


class ResolutionError(OUHardyError, ValueError):
    pass


class InputError(OUHardyError, ValueError):
    pass


class DegenerateInputError(InputError):
    pass


class SingularityError(InputError):
    pass


class DomainError(InputError):
    pass


class DivergentMomentError(DomainError):
    pass


class ConsistencyError(OUHardyError):
    pass


class InequalityViolationError(OUHardyError):
    pass


class IdentityViolationError(OUHardyError):
    pass


class ChainViolationError(InequalityViolationError):
    """An intermediate inequality of the localization chain failed."""

    def __init__(self, display: str, lhs: float, rhs: float):
        self.display = display
        self.lhs = lhs
        self.rhs = rhs
        super().__init__(f"{display}: {lhs!r} < {rhs!r}")


class SolverError(OUHardyError, RuntimeError):
    pass


class LinearSolverError(SolverError):
    pass


class StabilityError(OUHardyError, ValueError):
    pass


class PositivityViolationError(OUHardyError):
    pass


class RateBoundError(OUHardyError):
    pass


class SchemeConsistencyError(OUHardyError):
    pass
