"""Exception taxonomy shared across the toolkit.

The CLI maps these onto process exit codes: configuration problems exit
with 2, data problems with 3, numeric divergence with 4.
"""


class ConetError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ConetError):
    """Invalid configuration: bad shapes, unknown architectures, bad flags."""

    exit_code = 2


class DataError(ConetError):
    """Invalid or inconsistent input data: parse failures, empty datasets."""

    exit_code = 3


class NumericError(ConetError):
    """Numeric failure: non-finite losses or scores, broken oracles."""

    exit_code = 4
