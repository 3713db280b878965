"""Exception hierarchy shared by the solvers."""


class UbsrError(Exception):
    """Base class for all errors raised by this package."""


class LossOverflowError(UbsrError, OverflowError):
    """A loss evaluation would leave the representable floating-point range."""


class MaxIterationsError(UbsrError):
    """An iterative method hit its iteration cap before converging.

    The partial trace (if any) is kept on ``trace`` so callers can inspect
    how far the iteration got.
    """

    def __init__(self, message, trace=None, index=None):
        super().__init__(message)
        self.trace = trace
        self.index = index


class StallError(MaxIterationsError):
    """A backtracking line search exhausted its budget."""


class SingularJacobianError(UbsrError):
    """A Newton system became singular (for example, the gradient of L vanished)."""


class NonpositiveRhoError(UbsrError):
    """The multiplier iterate left (0, inf) and safeguarding was disabled."""


class DegenerateDerivativeError(UbsrError):
    """All l'(u_i) vanished, so the derivative of H is zero."""


class NoSignChangeError(UbsrError):
    """A scalar root-finding problem has no bracketing sign change."""


class InfeasibleStartError(UbsrError):
    """No strictly feasible starting point could be constructed."""


class BacktestAbortedError(UbsrError):
    """Too many rolling-window solves failed to converge."""


class ParseError(UbsrError, ValueError):
    """A returns CSV could not be parsed."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class AllMissingColumnError(UbsrError, ValueError):
    """A returns column has no usable entries left to impute from."""


class ConfigError(UbsrError, ValueError):
    """A run configuration is malformed."""
