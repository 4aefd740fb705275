"""
Exception hierarchy shared by the library modules and the command line front end
"""


class IntermittencyError(Exception):
    """Base class for every error raised by this package"""

    exit_code = 1


class ConfigError(IntermittencyError, ValueError):
    """Invalid parameters, malformed experiment files or unknown override paths"""

    exit_code = 2


class DomainError(IntermittencyError, ValueError):
    """Argument outside the domain of a map, tail or quantile function"""


class SingularityError(IntermittencyError, ValueError):
    """Observable evaluated exactly at one of its poles"""


class QuadratureError(IntermittencyError, ArithmeticError):
    """Integral did not reach the requested relative accuracy"""

    exit_code = 3


class StatisticalPowerError(IntermittencyError):
    """Not enough replicas or samples for the requested statistic"""

    exit_code = 3


class DegenerateDesignError(IntermittencyError, ValueError):
    """Regression design is singular or has too few points"""


class UndecidableConditionError(IntermittencyError):
    """Condition cannot be decided analytically for the given representation"""


class KeyMismatchError(IntermittencyError, KeyError):
    """Empirical and predicted report inputs do not share the same keys"""

    exit_code = 2
