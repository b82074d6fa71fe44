"""Exception types shared across the package."""


class UsageError(ValueError):
    """Invalid arguments or configuration."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class GraphError(RuntimeError):
    """The recorded computation graph is malformed."""


class NumericError(ArithmeticError):
    """Non-finite values, zero power, or divergence."""


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IntegrityError(FormatError):
    """Checksum mismatch in a checkpoint file."""
