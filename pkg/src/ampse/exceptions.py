"""Exception types shared across the package."""


class DivergenceError(RuntimeError):
    """An iterative run produced non-finite values or a blown-up residual.

    Carries the iteration index at which divergence was detected and,
    when raised from a full run, the trace accumulated so far.
    """

    def __init__(self, message, iteration=None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.trace = trace


class ConvergenceError(RuntimeError):
    """An iteration hit its budget before reaching the requested tolerance.

    ``last`` holds the best/last iterate available when the budget ran out.
    """

    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual


class CapabilityError(ValueError):
    """A closed-form evaluation was requested for an unsupported combination."""


class CalibrationRangeError(ValueError):
    """A penalty/threshold calibration query fell outside the valid region.

    ``achievable`` holds the (lo, hi) interval that is reachable, when known.
    """

    def __init__(self, message, achievable=None):
        super().__init__(message)
        self.achievable = achievable
