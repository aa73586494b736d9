"""
Exception types shared by the toolkit. Every error carries the exit code the
command line reports for it.
"""


class KwsError(Exception):
    """Base class for all toolkit failures."""
    exit_code = 1


class UsageError(KwsError):
    exit_code = 1


class ConfigurationError(KwsError, ValueError):
    exit_code = 1


class DimensionError(KwsError, ValueError):
    exit_code = 1


class ContractError(KwsError):
    exit_code = 1


class DataError(KwsError):
    exit_code = 2


class DegenerateInputError(DataError):
    exit_code = 2


class LabelError(DataError, IndexError):
    exit_code = 2


class NumericError(KwsError, ArithmeticError):
    exit_code = 3
