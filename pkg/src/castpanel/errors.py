"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto its documented exit statuses without string matching.
"""


class CastError(Exception):
    exit_code = 1


class ConfigError(CastError, ValueError):
    exit_code = 2


class DataError(CastError, ValueError):
    exit_code = 3


class InputError(DataError):
    """Malformed numerical input (non-finite entries, bad shapes)."""


class DimensionError(InputError):
    pass


class DomainError(CastError, IndexError):
    """Index outside the region an operation is defined on."""

    exit_code = 3


class UnsupportedDesignError(DataError):
    pass


class NumericalError(CastError, ArithmeticError):
    exit_code = 4


class RankInfeasibleError(NumericalError):
    pass


class ConditioningError(NumericalError):
    pass
