"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class DampwaveError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DampwaveError, ValueError):
    """Invalid domain, solver or experiment configuration."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.key = key
        self.line = line


class ShapeError(DampwaveError, ValueError):
    """Array shape does not match the basis or quadrature grid."""


class DomainError(DampwaveError, ValueError):
    """A numeric argument lies outside the admissible range."""


class EvaluationError(DampwaveError, ArithmeticError):
    """A nonlinearity or quadrature produced a non-finite value."""

    def __init__(self, message: str, t: float | None = None, x=None):
        if t is not None:
            message = f"{message} at t={t!r}" + (f", x={x!r}" if x is not None else "")
        super().__init__(message)
        self.t = t
        self.x = x


class BlowUpError(DampwaveError, ArithmeticError):
    """Energy norm exceeded the configured ceiling during integration."""

    def __init__(self, time: float, norm: float, ceiling: float):
        super().__init__(f"E0 norm {norm:.6g} exceeded ceiling {ceiling:.6g} at t={time:.6g}")
        self.time = time
        self.norm = norm
        self.ceiling = ceiling


class FitError(DampwaveError, ValueError):
    """A least-squares fit was degenerate or its residual too large."""


class NonAbsorptionError(DampwaveError):
    """An ensemble member failed to enter the absorbing ball."""

    def __init__(self, member: int, message: str = ""):
        super().__init__(f"member {member} was not absorbed" + (f": {message}" if message else ""))
        self.member = member


class HorizonTooShortError(DampwaveError):
    """Pullback sections at horizons T and 2T disagree beyond tolerance."""

    def __init__(self, gap: float, tolerance: float):
        super().__init__(f"Cauchy gap {gap:.6g} exceeds tolerance {tolerance:.6g}")
        self.gap = gap
        self.tolerance = tolerance


class ReproducibilityError(DampwaveError):
    """A replayed run diverged from its manifest."""
