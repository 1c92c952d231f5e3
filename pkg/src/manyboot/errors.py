"""Exception hierarchy.

``InputError`` subclasses describe bad data (CLI exit code 2);
``NumericalError`` subclasses describe degenerate numerics (exit code 3).
"""

from __future__ import annotations


class ManybootError(Exception):
    """Base class for all package errors."""


class InputError(ManybootError, ValueError):
    pass


class NumericalError(ManybootError, ArithmeticError):
    pass


class NonFiniteInput(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class DegenerateConstraint(InputError):
    pass


class CollinearRegressor(NumericalError):
    pass


class LeverageDegenerate(NumericalError):
    """Some observation has (numerically) zero annihilator diagonal."""

    def __init__(self, message: str, rows=()):
        super().__init__(message)
        self.rows = tuple(int(r) for r in rows)


class HCKUnavailable(NumericalError):
    """The squared-annihilator system is numerically singular."""


class NegativeVariance(NumericalError):
    pass


class DegenerateResiduals(NumericalError):
    pass


class NonPSDAdjustment(NumericalError):
    pass


class RedrawLimitExceeded(NumericalError):
    pass


class MissingColumn(InputError):
    pass


class NonNumericCell(InputError):
    pass


class SchemaMismatch(InputError):
    pass


class ConfigError(InputError):
    pass
