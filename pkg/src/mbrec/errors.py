"""Exception types shared across the package.

The CLI maps these onto exit codes: data errors -> 1, configuration or
state errors -> 2, numerical failures -> 3.
"""


class DataFormatError(ValueError):
    """Malformed or empty input data (bad line, unknown behavior, ...)."""


class ConfigError(ValueError):
    """Invalid configuration, parameters, or missing/corrupt artifacts."""


class NumericalError(RuntimeError):
    """Non-finite loss or gradient encountered during optimization."""
