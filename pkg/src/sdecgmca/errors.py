"""Exception types raised across the package."""


class SDecError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SDecError, ValueError):
    pass


class DegenerateKernelError(SDecError):
    """A kernel vanishes where it has to be divided by."""


class GenerationError(SDecError):
    """A random generator could not reach its target."""


class InitializationError(SDecError):
    pass


class SingularSystemError(SDecError, ArithmeticError):
    """A linear system that must be inverted is singular.

    ``degree`` holds the offending spherical harmonic degree when known.
    """

    def __init__(self, message, degree=None):
        super().__init__(message)
        self.degree = degree


class SolverError(SDecError):
    """Failure inside a solver stage, with iteration context."""

    def __init__(self, message, stage=None, iteration=None):
        super().__init__(message)
        self.stage = stage
        self.iteration = iteration


class DegenerateColumnWarning(UserWarning):
    """A mixing-matrix column was annihilated by the non-negative projection."""


class ConvergenceWarning(UserWarning):
    pass
