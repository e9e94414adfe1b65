"""Exception hierarchy shared across the package."""


class RdlearnError(Exception):
    """Base class for all rdlearn errors."""


class ValidationError(RdlearnError, ValueError):
    """Input data violates a structural requirement."""


class SchemaError(ValidationError):
    """A CSV schema or run configuration is malformed."""


class ParseError(ValidationError):
    """A cell in an input file could not be parsed.

    Row/column indices are 0-based and refer to the data portion
    (the header row is not counted).
    """

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DomainError(RdlearnError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class SingularMatrixError(RdlearnError, ValueError):
    """A linear system stayed singular after the jitter escalation."""

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class ContractError(RdlearnError, ValueError):
    """An operation was called with inputs its statistical contract forbids."""
