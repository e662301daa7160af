"""Exception types shared across the package."""


class ContractError(ValueError):
    """A numerical precondition of an operation was violated."""


class MatrixMarketError(ValueError):
    """Malformed or unsupported Matrix Market input."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SearchFailure(RuntimeError):
    """A sample-complexity search exceeded its probe budget."""
