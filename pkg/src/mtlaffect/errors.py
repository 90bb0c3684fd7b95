"""Exception hierarchy shared by every subsystem.

The CLI maps these onto exit codes: configuration problems exit with 1,
data problems with 2 and numeric failures with 3.
"""


class MTLError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(MTLError, ValueError):
    exit_code = 1


class ContractError(MTLError, RuntimeError):
    """A caller broke a documented precondition (e.g. non-scalar loss)."""

    exit_code = 1


class DimensionError(MTLError, ValueError):
    exit_code = 1


class DataError(MTLError, ValueError):
    exit_code = 2


class LoadError(DataError):
    """A file on disk could not be parsed or is inconsistent with its manifest."""


class AlignmentError(DataError):
    """Prediction files do not cover the same (video, frame) keys."""


class UndefinedMetricError(DataError):
    exit_code = 2


class NumericError(MTLError, FloatingPointError):
    exit_code = 3


class ConfigWarning(UserWarning):
    pass
