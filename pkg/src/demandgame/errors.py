"""Exception hierarchy shared across the package."""

from __future__ import annotations


class DemandGameError(Exception):
    """Base class for all errors raised by this package."""


class InvalidScenario(DemandGameError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid scenario: {lines}")


class NonPositivePrice(DemandGameError, ValueError):
    pass


class NegativeDemand(DemandGameError, ValueError):
    pass


class ZeroAggregateBudget(DemandGameError, ValueError):
    pass


class SingularMatrix(DemandGameError, ArithmeticError):
    pass


class IdentityViolation(DemandGameError, ArithmeticError):
    """An equilibrium identity that must hold algebraically failed numerically."""


class ZetaNotUniform(DemandGameError, ValueError):
    pass


class DegenerateDenominator(DemandGameError, ArithmeticError):
    pass


class ScaleTooLarge(DemandGameError, ValueError):
    pass


class Diverged(DemandGameError, RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class CapExceeded(DemandGameError, RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class AsymmetricScenario(DemandGameError, ValueError):
    pass


class NonPositiveInput(DemandGameError, ValueError):
    pass


class ParseError(DemandGameError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnitError(DemandGameError, ValueError):
    pass


class ShareSumError(DemandGameError, ValueError):
    pass


class CountMismatch(DemandGameError, ValueError):
    pass


class StageError(DemandGameError):
    """Wraps a failure inside a case-study pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
