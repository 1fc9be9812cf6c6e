"""Exception types raised across the package."""


class HomeOptError(Exception):
    """Base class for package errors."""


class InvalidArgument(HomeOptError, ValueError):
    """Bad input: dimension mismatch, out-of-range parameter, malformed config."""


class OracleFailure(HomeOptError, ArithmeticError):
    """The objective oracle returned a non-finite value or subgradient."""


class SolverDiverged(HomeOptError, ArithmeticError):
    """An iterate left the finite reals.

    ``trace`` carries whatever the caller had recorded before the failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class ResourceLimit(HomeOptError, MemoryError):
    """A brute-force grid would exceed the allowed number of cells."""
