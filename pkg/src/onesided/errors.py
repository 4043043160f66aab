"""Exception hierarchy shared by every module of the package."""


class OneSidedError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(OneSidedError, ValueError):
    """A distribution parameter or probability lies outside its domain."""


class DimensionError(OneSidedError, ValueError):
    """Array shapes do not agree."""


class UnsupportedDimensionError(DimensionError):
    """The procedure is only defined for a particular dimension."""


class DegenerateMatrixError(OneSidedError, ValueError):
    """A covariance matrix is singular, indefinite or too ill-conditioned."""


class ConvergenceError(OneSidedError, RuntimeError):
    """An iterative numerical procedure failed to converge."""


class BootstrapDegenerateError(OneSidedError, RuntimeError):
    """Too many bootstrap replicates failed to produce an estimate."""


class DataFormatError(OneSidedError, ValueError):
    """An input file could not be parsed."""
