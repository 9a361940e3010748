"""Exception types raised across the package."""


class StockDPError(Exception):
    """Base class for all package errors."""


class DomainError(StockDPError, ValueError):
    """A state or parameter lies outside the domain of the operation."""


class ConstraintError(StockDPError, ValueError):
    """An order violates the feasible-action set of the regime."""


class InvalidSpecError(StockDPError, ValueError):
    """A model specification failed validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class GridError(StockDPError, ValueError):
    """Grid and model (or two grids) are incompatible."""


class ExtractionError(StockDPError):
    """(s, S) thresholds cannot be extracted reliably from a grid function."""


class StructureUnsupportedError(StockDPError):
    """Structured policies are only established for (U, BS) with backorders."""


class OracleDisagreementError(StockDPError):
    """Two independent computations of the same quantity disagree."""


class DivergenceError(StockDPError):
    """Value iteration produced a diverging verdict."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
