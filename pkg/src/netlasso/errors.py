"""Exception types shared across the package."""


class NetLassoError(Exception):
    """Base class for all package errors."""


class InvalidArgument(NetLassoError, ValueError):
    pass


class ConvergenceFailure(NetLassoError, RuntimeError):
    """An iterative routine hit its iteration cap.

    ``estimate`` holds the last iterate (or value) and ``residual`` the last
    convergence measure, so callers can decide whether it is usable anyway.
    """

    def __init__(self, message, estimate=None, residual=None):
        super().__init__(message)
        self.estimate = estimate
        self.residual = residual


class DivergenceFailure(NetLassoError, RuntimeError):
    def __init__(self, message, iteration=None, algorithm=None):
        super().__init__(message)
        self.iteration = iteration
        self.algorithm = algorithm


class ConstructionFailure(NetLassoError, RuntimeError):
    pass


class SearchFailure(NetLassoError, RuntimeError):
    pass


class PreconditionViolation(NetLassoError, ValueError):
    pass


class InsufficientData(NetLassoError, ValueError):
    pass


class ExperimentFailure(NetLassoError, RuntimeError):
    pass


class InvariantViolation(NetLassoError, AssertionError):
    """A runtime invariant check (enabled with ``check_invariants``) failed."""
