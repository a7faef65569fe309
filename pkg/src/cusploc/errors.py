"""Exception types shared across the package."""


class CusplocError(Exception):
    """Base class for package errors."""


class ConfigError(CusplocError, ValueError):
    """Invalid experiment configuration or model definition."""


class ModelFunctionError(CusplocError, ValueError):
    """A model function (h, prior, g) returned non-finite values."""


class GridMismatchError(CusplocError, ValueError):
    """Two paths do not share the same time grid."""


class DomainError(CusplocError, ValueError):
    """An argument lies outside the mathematically valid domain."""


class InternalConsistencyError(CusplocError, RuntimeError):
    """An invariant that should hold for valid models was violated."""


class NumericalError(CusplocError, RuntimeError):
    """A numerical procedure (factorization, quadrature) failed."""


class GridTooSmallError(CusplocError, RuntimeError):
    """Too much probability mass escapes the simulation grid."""
