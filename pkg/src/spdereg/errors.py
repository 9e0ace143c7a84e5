"""Exception hierarchy.

Every failure raised by the library derives from :class:`SpderegError`, and
the ones that describe bad input also derive from ``ValueError`` so callers
catching the builtin keep working.
"""


class SpderegError(Exception):
    """Base class for all library errors."""


class NonPositiveEigenvalue(SpderegError, ValueError):
    pass


class AlphaOutOfRange(SpderegError, ValueError):
    pass


class DimMismatch(SpderegError, ValueError):
    pass


class GammaOutOfRange(SpderegError, ValueError):
    pass


class QuadratureFailure(SpderegError, RuntimeError):
    pass


class IndefiniteKernel(SpderegError, ValueError):
    pass


class AsymmetricKernel(SpderegError, ValueError):
    pass


class TooManyModes(SpderegError, ValueError):
    pass


class BetaTooSmall(SpderegError, ValueError):
    pass


class NotMonotone(SpderegError, ValueError):
    pass


class RangeViolation(SpderegError, ValueError):
    pass


class NotLipschitz(SpderegError, ValueError):
    pass


class AlphaNotZero(SpderegError, ValueError):
    pass


class AlphaNotHalf(SpderegError, ValueError):
    pass


class RangeNotH12(SpderegError, ValueError):
    pass


class NotOrthonormal(SpderegError, ValueError):
    pass


class MembershipUndecided(SpderegError, RuntimeError):
    pass


class MissingDifferential(SpderegError, ValueError):
    pass


class NonFiniteState(SpderegError, FloatingPointError):
    pass


class NoConvergence(SpderegError, RuntimeError):
    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ObservableUnbounded(SpderegError, ValueError):
    pass


class DegenerateTime(SpderegError, ValueError):
    pass


class DirectionNotInHAlpha(SpderegError, ValueError):
    pass


class ConfigError(SpderegError, ValueError):
    """Invalid experiment configuration. ``field`` is a dotted path to the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
