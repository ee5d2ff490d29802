"""Exception hierarchy for the toolkit."""


class FscError(Exception):
    """Base class for all errors raised by fscbounds."""


class NonStochasticRow(FscError, ValueError):
    pass


class Reducible(FscError, ValueError):
    pass


class DeadEndConstraint(FscError, ValueError):
    pass


class ParameterOutOfRange(FscError, ValueError):
    pass


class IndexOutOfRange(FscError, IndexError):
    pass


class WindowLengthMismatch(FscError, ValueError):
    pass


class LetterOutOfRange(FscError, ValueError):
    pass


class ImpossibleObservation(FscError, ArithmeticError):
    """The observed output has zero probability under the model."""


class BudgetExceeded(FscError):
    """A configured size budget would be exceeded."""


class GridTooLarge(BudgetExceeded):
    pass


class PolicySpaceTooLarge(BudgetExceeded):
    pass


class EnumerationTooLarge(BudgetExceeded):
    pass


class DelayMismatch(FscError, ValueError):
    pass


class DigestMismatch(FscError, ValueError):
    pass


class ConfigError(FscError, ValueError):
    """Invalid experiment configuration; message names the offending field."""
