"""Exception hierarchy shared across the package."""


class BilimorError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(BilimorError):
    """Invalid argument: bad value, bad grid, unresolvable path, etc."""


class DimensionError(BilimorError):
    """Matrix or vector dimensions are inconsistent."""


class StabilityError(BilimorError):
    """A stability precondition (Hurwitz or mean-square) does not hold."""


class SingularityError(BilimorError):
    """A linear operator required to be invertible is numerically singular."""


class RankDeficiencyError(BilimorError):
    """A Gramian is numerically rank deficient where a full-rank factor is needed."""


class DivergenceError(BilimorError):
    """A trajectory exceeded the integrator overflow guard."""


class ConsistencyError(BilimorError):
    """A quantity violates an identity it must satisfy; signals solver failure."""
