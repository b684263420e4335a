"""Exception types shared across the package."""


class DimensionMismatch(ValueError):
    """Operand shapes are incompatible."""


class NotPositiveDefinite(ValueError):
    """A matrix that must be symmetric positive definite is not."""


class StateOutOfRange(ValueError):
    """A plant state violates its admissible range."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class ParseError(ConfigError):
    """Malformed configuration text."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class ValidationError(ConfigError):
    """A configuration value violates an invariant."""
