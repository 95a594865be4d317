"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration file, key, or flag value."""


class DataError(ValueError):
    """Malformed input data (CSV cells, rule files, shape mismatches in files)."""


class NumericError(RuntimeError):
    """Numerical failure: NaN loss, degenerate prior, solver breakdown."""


class RuleSyntaxError(DataError):
    """Rule DSL parse failure, carrying the byte offset of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class ShapeError(ValueError):
    """Operand shapes do not conform for a tape primitive."""
