class StochOptError(Exception):
    """Base class for every error raised by this package."""


class NonFiniteError(StochOptError, ValueError):
    pass


class DimensionMismatchError(StochOptError, ValueError):
    pass


class SingularAfterRidgeError(StochOptError, ArithmeticError):
    pass


class NotPSDError(StochOptError, ValueError):
    pass


class AllZeroWeightsError(StochOptError, ValueError):
    pass


class NonPositiveBandwidthError(StochOptError, ValueError):
    pass


class RateOutOfRangeError(StochOptError, ValueError):
    pass


class KOutOfRangeError(StochOptError, ValueError):
    pass


class NoNeighborsError(StochOptError, RuntimeError):
    pass


class NoSplitsError(StochOptError, RuntimeError):
    pass


class NoValidCandidateError(StochOptError, RuntimeError):
    pass


class DegenerateDenominatorError(StochOptError, ZeroDivisionError):
    pass


class InfeasibleError(StochOptError, RuntimeError):
    pass


class ConfigError(StochOptError, ValueError):
    pass
