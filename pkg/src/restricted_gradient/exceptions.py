"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent shapes, partitions or parameters."""


class NumericError(ArithmeticError):
    """A numerical routine failed (SVD failure, step-size blow-up)."""


class NonConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap before its tolerance.

    The last iterate is kept on ``last`` so callers can still inspect it.
    """

    def __init__(self, message, last=None, iterations=None):
        super().__init__(message)
        self.last = last
        self.iterations = iterations
