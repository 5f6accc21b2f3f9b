"""Exception types raised across the package."""


class ValidationError(ValueError):
    """A value breaks a documented invariant or precondition."""


class ParseError(ValidationError):
    """A rollout log record could not be decoded."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ConsistencyError(RuntimeError):
    """Inputs that should come from the same candidate set do not agree."""
