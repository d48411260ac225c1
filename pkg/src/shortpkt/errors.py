"""Exception hierarchy shared by every module."""


class ShortPacketError(Exception):
    """Base class for all errors raised by :mod:`shortpkt`."""


class ParameterError(ShortPacketError, ValueError):
    """A parameter is outside its admissible range."""


class StabilityError(ParameterError):
    """The queue has no steady state (lambda * n >= 1 - epsilon)."""


class EvaluationError(ShortPacketError, ArithmeticError):
    """A generating function hit a non-removable pole where it must be finite."""


class NumericalInstabilityError(ShortPacketError, ArithmeticError):
    """Working precision is insufficient for the requested quantity.

    Usually fixed by rebuilding the generating function in extended
    precision (``precision="extended"`` or an explicit digit count).
    """


class BelowMeanError(ShortPacketError, ValueError):
    """Saddlepoint approximation requested at a threshold not above the mean."""


class ConvergenceError(ShortPacketError, ArithmeticError):
    """An iterative solver failed to bracket or reach its root."""


class InfeasibleBoundError(ShortPacketError, ValueError):
    """The network-calculus feasible set {s > 1 : G_A(s) G_U(1/s) < 1} is empty."""


class InfeasibleTargetError(ShortPacketError, ValueError):
    """No positive arrival rate meets the violation-probability target."""


class MonotonicityError(ShortPacketError, RuntimeError):
    """Violation probability was observed to decrease as the arrival rate grew."""


class InsufficientDataError(ShortPacketError, RuntimeError):
    """A simulation recorded no samples after warm-up."""
