"""Exception hierarchy shared across the package."""


class TTIPWError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(TTIPWError):
    """A requested column is missing from the CSV header."""


class CSVParseError(TTIPWError):
    """A cell could not be parsed; carries the offending 1-based data row."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class SampleValidationError(TTIPWError):
    """The sample violates a structural requirement (size, arms, shapes)."""


class DomainError(TTIPWError):
    """An argument is outside the mathematical domain of the operation."""


class SeparationError(TTIPWError):
    """The likelihood has no interior maximizer (perfectly separated data)."""


class SingularMatrixError(TTIPWError):
    """A matrix that must be inverted is singular or too ill-conditioned."""


class DegenerateProbabilityError(TTIPWError):
    """A fitted probability hit 0 or 1 at machine precision."""


class FractileError(TTIPWError):
    """A trimming or tail fractile is outside its admissible range."""


class DegenerateTailError(TTIPWError):
    """Tail order statistics carry no information (zero log-spacing)."""


class InfeasibleBiasError(TTIPWError):
    """A tail index at or below 1 puts the bias formula at its pole."""


class DegenerateScaleError(TTIPWError):
    """A scale that must be positive is zero."""


class NotConvergedError(TTIPWError):
    """An operation requires a converged fit but got a non-converged one."""
