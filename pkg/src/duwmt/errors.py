"""Error types shared across the package, mapped to CLI exit codes."""


class DuwmtError(Exception):
    """Base class for package errors."""


class ConfigError(DuwmtError):
    """Invalid configuration (CLI exit code 2)."""


class DataError(DuwmtError):
    """Corrupt or inconsistent dataset on disk (CLI exit code 3)."""


class NumericError(DuwmtError):
    """Non-finite values produced during computation (CLI exit code 4)."""


class ShapeError(DuwmtError):
    """Operand shapes do not conform to the operation's contract."""


class GraphConsumedError(DuwmtError):
    """backward() was called twice on the same graph."""
