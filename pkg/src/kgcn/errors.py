"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError (and its
ParseError subclass) -> 2, NumericalError -> 3.
"""


class KgcnError(Exception):
    pass


class ConfigError(KgcnError):
    """Inconsistent or invalid configuration (flags, dims, ratios)."""


class DataError(KgcnError):
    """Bad input data that is not a simple parse failure."""


class ParseError(DataError):
    """Malformed line in an input file; carries the 1-based line number."""

    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class NumericalError(KgcnError):
    """Non-finite value encountered during training or inference."""
