"""Exception types shared across the package."""


class IEProtError(Exception):
    """Base class for all package errors."""


class ParseError(IEProtError):
    """Malformed input file. Carries the 1-based line number when known."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class EmptyStructureError(IEProtError):
    """No usable ATOM records were found."""


class UnknownElementError(IEProtError):
    """Element symbol absent from the element table."""


class GraphFormatError(IEProtError):
    """Bad magic, truncation, or checksum mismatch in a binary graph block."""


class DisconnectedGraphError(IEProtError):
    """Spectral clustering was handed a disconnected graph."""


class ShapeError(IEProtError):
    """Tensor shapes incompatible for a primitive."""


class NumericError(IEProtError):
    """Non-finite value encountered during optimization."""
