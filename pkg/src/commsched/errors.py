"""Exception types shared across the package."""


class CommschedError(Exception):
    """Base class for all library errors."""


class NonConvergent(CommschedError):
    """An iterative solver exhausted its budget without reaching tolerance."""


class NotStabilizing(CommschedError):
    """A feedback gain (given or computed) does not stabilize the closed loop."""


class SingularInnovation(CommschedError):
    """The innovation covariance V + C*Ebar*C' is not positive definite."""


class InfeasibleSchedule(CommschedError):
    """A schedule violates the per-slot channel capacity or entry bounds."""


class TooLarge(CommschedError):
    """Exhaustive enumeration would exceed the configured size bound."""


class InvalidAlpha(CommschedError):
    """The Lyapunov decrease rate alpha is >= 1; the bound is vacuous."""
