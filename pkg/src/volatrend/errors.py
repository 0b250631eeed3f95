"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad input: shape mismatch, out-of-range value, malformed file."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a kernel."""


class ConvergenceError(RuntimeError):
    """A solver failed to converge.

    Carries the best iterate found so far in ``result`` when available.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class StepSizeError(ConvergenceError):
    """Line search could not find an acceptable step."""


class PowerIterationError(ConvergenceError):
    """Operator-norm estimation did not converge; ``best_estimate`` is set."""

    def __init__(self, message, best_estimate):
        super().__init__(message)
        self.best_estimate = best_estimate
