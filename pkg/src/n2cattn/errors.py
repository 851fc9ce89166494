"""Exception types raised across the package."""


class N2CError(Exception):
    """Base class for all errors raised by n2cattn."""


class IndexOutOfRange(N2CError, IndexError):
    pass


class ShapeMismatch(N2CError, ValueError):
    pass


class InvalidPermutation(N2CError, ValueError):
    pass


class InvalidConfig(N2CError, ValueError):
    pass


class LabelOutOfRange(N2CError, IndexError):
    pass


class NonFiniteInput(N2CError, ValueError):
    pass


class InvalidAlpha(N2CError, ValueError):
    pass


class DegenerateAttention(N2CError, ArithmeticError):
    """A normalizer fell below the configured floor.

    Carries the offending cluster rows so callers can report them.
    """

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = tuple(int(r) for r in rows)


class EmptyInput(N2CError, ValueError):
    pass


class ParseError(N2CError, ValueError):
    pass
