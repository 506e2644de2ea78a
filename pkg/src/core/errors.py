"""Exception types raised by the loaders, estimators and design calculators."""

from __future__ import annotations


class EtsiError(Exception):
    """Base class for every domain failure raised by this package."""


class DataValidationError(EtsiError, ValueError):
    """Input data does not satisfy the trial schema."""


class SchemaError(DataValidationError):
    """Header is missing, carries an extra column, or is out of order."""


class RowValidationError(DataValidationError):
    """A subject record violates the arm or measurement-indicator invariants."""


class ParseError(DataValidationError):
    """A field could not be read as a finite number."""


class NumericalError(EtsiError, RuntimeError):
    """An estimator could not produce a usable value."""


class DegenerateBandwidthError(NumericalError):
    """Smoothing variable has zero spread."""


class EstimationError(NumericalError):
    """Too few subjects to fit a smoother or populate a stratum."""


class VarianceUndefinedError(NumericalError):
    """A single-subject stratum carries nonzero weight in the variance."""


class DesignUndefinedError(NumericalError):
    """Design ratios cannot be formed from the cross-validated contrasts."""


class NoSolutionError(NumericalError):
    """The planned effect is not positive, so no sample size reaches the target power."""


__all__ = [
    "DataValidationError",
    "DegenerateBandwidthError",
    "DesignUndefinedError",
    "EstimationError",
    "EtsiError",
    "NoSolutionError",
    "NumericalError",
    "ParseError",
    "RowValidationError",
    "SchemaError",
    "VarianceUndefinedError",
]
