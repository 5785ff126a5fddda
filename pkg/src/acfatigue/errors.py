"""Exception hierarchy shared by every stage of the pipeline."""


class FatigueError(Exception):
    """Base class for errors raised by acfatigue."""


class ConfigError(FatigueError, ValueError):
    """Invalid or unknown configuration."""


class DataError(FatigueError, ValueError):
    """Malformed input data or a dataset that cannot be used."""


class NumericalOverflowError(FatigueError, ArithmeticError):
    pass


class GradientOverflowError(FatigueError, ArithmeticError):
    pass
