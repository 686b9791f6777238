"""Exception hierarchy shared across the package.

Exit-code mapping used by the command line front end:
0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""


class BitrajError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(BitrajError):
    """Invalid configuration: unknown keys, bad values, inconsistent options."""

    exit_code = 2


class DataError(BitrajError):
    """Invalid data content (negative box sizes, duplicate frames, empty sets)."""

    exit_code = 3


class ParseError(DataError):
    """Malformed input file; the message names the offending line."""

    exit_code = 3


class NumericalError(BitrajError):
    """Non-finite values or numerically impossible states during computation."""

    exit_code = 4
