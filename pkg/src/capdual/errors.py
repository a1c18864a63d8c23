"""Exception hierarchy shared by the solvers and the command line."""


class CapdualError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CapdualError, ValueError):
    """Array shapes or alphabet sizes do not agree."""


class InvalidDistributionError(CapdualError, ValueError):
    """A probability table violates non-negativity or normalization."""


class InfeasibleError(CapdualError, ValueError):
    """The constraint level lies below the smallest achievable cost or distortion."""


class ConvergenceError(CapdualError, RuntimeError):
    """An iterative solver exhausted its iteration budget."""


class EnumerationLimitError(CapdualError, ValueError):
    """An exhaustive search would exceed its configured size limit."""
