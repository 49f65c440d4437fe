"""Exception types shared across the package."""


class AoiSchedError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(AoiSchedError, ValueError):
    pass


class CapacityError(AoiSchedError):
    """State space larger than the configured cap."""

    def __init__(self, message, dimensions=None):
        super().__init__(message)
        self.dimensions = dimensions or {}


class NonConvergenceError(AoiSchedError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ReducibleChainError(AoiSchedError):
    """Policy-induced chain has more than one closed class."""


class InvalidPenaltyError(AoiSchedError, ValueError):
    pass


class TraceError(AoiSchedError, ValueError):
    """Malformed update trace or out-of-domain query time."""


class GeneratorError(AoiSchedError, ValueError):
    pass


class InvalidRequestError(AoiSchedError, ValueError):
    pass


class ContractViolation(AoiSchedError):
    """An operation was called with an infeasible action."""
