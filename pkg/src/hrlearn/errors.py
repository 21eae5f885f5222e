"""Exception types raised across the package."""


class HrError(Exception):
    """Base class for all errors raised by hrlearn."""


class SingularSum(HrError):
    """``gram + R`` is numerically singular."""


class SingularGram(HrError):
    """The Gram matrix is singular where an inverse was required."""


class SpectralViolation(HrError):
    """The regularization factor has spectral radius at or above the tolerance."""


class InvalidStrategy(HrError):
    """A regularization strategy cannot be materialized for this problem."""


class NonPsd(HrError):
    """A matrix expected to be positive semidefinite has a negative eigenvalue."""


class IllConditioned(HrError):
    """The accumulated Gram matrix is too ill-conditioned for bias correction."""


class DimensionMismatch(HrError, ValueError):
    pass


class StepAfterTerminal(HrError):
    """``step`` was called on an environment whose episode has ended."""


class InsufficientData(HrError, ValueError):
    pass


class ConfigError(HrError, ValueError):
    pass
