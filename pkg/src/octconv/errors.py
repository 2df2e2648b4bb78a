"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor dimensions are inconsistent with the requested operation."""


class ConfigError(ValueError):
    """An operator or layer was configured with invalid hyper-parameters."""


class DomainError(ValueError):
    """A scalar argument lies outside its mathematical domain."""


class SpecError(ValueError):
    """A network description failed to parse or build.

    ``line`` is the 1-based line number in the source text, when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class WeightFileError(ValueError):
    """A weight container is truncated, corrupt, or belongs to another network."""
