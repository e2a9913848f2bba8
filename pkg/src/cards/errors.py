"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition or file format."""


class ContractViolation(ValidationError):
    """Raised when data that should be internally consistent is not."""
