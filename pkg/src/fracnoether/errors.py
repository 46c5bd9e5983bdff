"""Exception hierarchy.

Two families matter to callers: :class:`InputError` (malformed or
inconsistent input, CLI exit code 2) and :class:`NumericalError`
(a well-posed request that failed numerically, CLI exit code 3).
"""

from __future__ import annotations


class FracNoetherError(Exception):
    """Base class for every error raised by this package."""


class InputError(FracNoetherError, ValueError):
    pass


class NumericalError(FracNoetherError, ArithmeticError):
    pass


class ExprSyntaxError(InputError):
    """Parse failure at a byte offset of the source text."""

    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} at offset {offset}")


class UnknownNameError(InputError):
    pass


class UnboundVariableError(InputError):
    pass


class EvalDomainError(NumericalError):
    """Evaluation left the real domain (1/0, ln of non-positive, overflow...).

    ``index`` is the first offending node when evaluating over a grid.
    """

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        if index is not None:
            message = f"{message} (node {index})"
        super().__init__(message)


class GridMismatchError(InputError):
    pass


class GridTooLargeError(InputError):
    pass


class UnsupportedTransformationError(InputError):
    pass


class NotLinearQuadraticError(InputError):
    pass


class NotAutonomousError(InputError):
    pass


class OracleConvergenceError(NumericalError):
    def __init__(self, message: str, estimates: tuple[float, float]):
        self.estimates = estimates
        super().__init__(f"{message}; last estimates {estimates[0]!r}, {estimates[1]!r}")


class SingularSystemError(NumericalError):
    def __init__(self, message: str, rcond: float):
        self.rcond = rcond
        super().__init__(f"{message} (reciprocal condition estimate {rcond:.3e})")


class ConvergenceError(NumericalError):
    """Iterative solve stopped before meeting its tolerance.

    The partial result is attached as ``result`` for diagnostics.
    """

    def __init__(self, message: str, result=None):
        self.result = result
        super().__init__(message)
