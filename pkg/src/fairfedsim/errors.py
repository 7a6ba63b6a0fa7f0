"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented precondition."""


class ParseError(ValidationError):
    """A CSV or config file could not be parsed; message names the location."""


class CapacityError(ValidationError):
    """A partition quota exceeds the available samples of a cell."""


class ConfigError(ValidationError):
    """An experiment config failed validation; message carries the field path."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; message names the epoch."""


class NumericsError(RuntimeError):
    """An iterative numeric procedure failed to converge."""
