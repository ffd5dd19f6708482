"""Exception hierarchy.

CLI exit codes are attached to the classes so ``cli.main`` can map any
library failure onto the documented process status.
"""


class RwmvcError(Exception):
    exit_code = 3


class InvalidParameterError(RwmvcError, ValueError):
    exit_code = 1


class ConfigError(InvalidParameterError):
    exit_code = 1


class ShapeError(RwmvcError, ValueError):
    exit_code = 3


class DegenerateInputError(RwmvcError, ValueError):
    exit_code = 3


class NumericDomainError(RwmvcError, ArithmeticError):
    exit_code = 3


class DataError(RwmvcError):
    exit_code = 2


class CheckpointError(RwmvcError):
    exit_code = 2


class SpecError(RwmvcError, ValueError):
    """Layer specs that do not chain, or mismatched architectures."""

    exit_code = 1
