"""Exception hierarchy.

Every error raised by the package derives from :class:`FactorSVARError`.
The CLI maps the three families below to distinct exit codes.
"""

from __future__ import annotations


class FactorSVARError(Exception):
    """Base class for all package errors."""


class ValidationError(FactorSVARError):
    """Inputs (data, restrictions, prior, dimensions) are malformed."""


class NumericalError(FactorSVARError):
    """A numerical routine failed (Cholesky, degenerate posterior, ...)."""


class InfeasibleRegionError(FactorSVARError):
    """A truncation region has no interior point."""

    def __init__(self, message: str, *, context: dict | None = None):
        super().__init__(message)
        self.context = dict(context or {})


class InvalidBounds(ValidationError):
    pass


class NumericallyDegenerate(NumericalError):
    pass


class DegeneratePosterior(NumericalError):
    pass


class RankDeficientLoadings(NumericalError):
    pass


class ImproperPosterior(NumericalError):
    pass


class StabilityNotFound(NumericalError):
    pass


class PatternSearchExhausted(FactorSVARError):
    pass


# Kept as an alias so call sites can use the short name.
InfeasibleRegion = InfeasibleRegionError
