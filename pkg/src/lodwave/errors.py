"""Exception types raised by the solver stack."""


class LodWaveError(Exception):
    """Base class for all errors raised by lodwave."""


class CapacityError(LodWaveError, ValueError):
    """Requested mesh exceeds the memory guard."""


class ResolutionError(LodWaveError, ValueError):
    """Fine mesh does not resolve the coefficient scale."""


class NumericError(LodWaveError, ArithmeticError):
    """A factorization or solve failed its numerical contract."""


class CFLViolationError(LodWaveError, ValueError):
    """Time step exceeds the CFL bound and no override was given."""


class InstabilityError(LodWaveError, ArithmeticError):
    """Time stepping blew up.

    ``step`` holds the index of the first state flagged as unstable.
    """

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step
