"""Exception types raised across the package."""


class SDBoundsError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SDBoundsError, ValueError):
    pass


class IndexOutOfRange(SDBoundsError, IndexError):
    pass


class ZeroLikelihood(SDBoundsError, ArithmeticError):
    """The observation has (numerically) zero probability under the model."""


class NotTP2(SDBoundsError, ValueError):
    pass


class NotGenerator(SDBoundsError, ValueError):
    pass


class Infeasible(SDBoundsError, RuntimeError):
    pass


class SolverStalled(SDBoundsError, RuntimeError):
    """Inner iterations were exhausted before reaching feasibility.

    The best iterate found so far is attached as ``result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class PostProcessDegraded(SDBoundsError, RuntimeError):
    pass


class InvalidBounds(SDBoundsError, ValueError):
    pass


class DegenerateDistribution(SDBoundsError, ValueError):
    pass


class RequiresDiscreteObs(SDBoundsError, TypeError):
    pass


class DegenerateF(SDBoundsError, ArithmeticError):
    pass


class SizeCapExceeded(SDBoundsError, MemoryError):
    pass
