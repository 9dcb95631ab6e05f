"""Exception types raised across the toolkit."""


class InvalidArgumentError(ValueError):
    pass


class InfeasibleDecisionError(ValueError):
    """A decision spends more energy or data than the buffer holds."""

    def __init__(self, message, kind, deficit):
        super().__init__(message)
        self.kind = kind
        self.deficit = deficit


class NonConvergenceError(RuntimeError):
    """Fixed-point iteration hit ``max_iter`` before meeting its tolerance."""

    def __init__(self, message, last_iterate, residual):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class ResourceCapError(RuntimeError):
    """A request would exceed a configured size cap."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class UnsupportedPolicyError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class UndefinedEfficiencyError(ArithmeticError):
    """Efficiency asked for when the offline benchmark earns nothing."""
