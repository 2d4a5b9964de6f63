"""Exception hierarchy shared by every antgan module."""


class AntGanError(Exception):
    """Base class for all errors raised by antgan."""

    exit_code = 1


class DimensionError(AntGanError, ValueError):
    pass


class UsageError(AntGanError):
    pass


class ConfigError(AntGanError, ValueError):
    pass


class ValidationError(AntGanError, ValueError):
    pass


class ContractError(AntGanError):
    """An API precondition about gradient flow was broken."""


class NumericError(AntGanError, ArithmeticError):
    exit_code = 2


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, message, iteration=None, checkpoint=None):
        super().__init__(message)
        self.iteration = iteration
        self.checkpoint = checkpoint


class FormatError(AntGanError):
    """Malformed binary file; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UndefinedMetricError(AntGanError, ValueError):
    pass
