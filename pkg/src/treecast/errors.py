"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: config 2, data 3, numeric 4.
"""


class TreecastError(Exception):
    """Base class for all package errors."""


class ConfigError(TreecastError):
    """Invalid or incomplete run configuration."""


class DataError(TreecastError):
    """Malformed input data (parsing, duplicate keys, bad types)."""


class SchemaError(TreecastError):
    """Feature schema of the data does not match the model."""


class NumericError(TreecastError):
    """Numeric guard tripped (non-finite loss, invalid recursion state)."""
