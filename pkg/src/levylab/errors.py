"""Exception types shared across the package."""


class LevyLabError(Exception):
    """Base class for all levylab errors."""


class DimensionMismatchError(LevyLabError):
    """Point, symbol or coefficient dimensions do not agree."""


class TabulationRangeError(LevyLabError):
    """A tabulated symbol was evaluated outside its radial grid."""


class TailToleranceError(LevyLabError):
    """Frequency cutoff too small: exp(-t Re psi(R)) above the tail tolerance."""


class QuadratureError(LevyLabError):
    """Fourier inversion produced an invalid density (ringing, divergence)."""


class GateError(LevyLabError):
    """An analytic applicability gate failed hard."""


class ConvergenceError(LevyLabError):
    """An iterative solve did not converge, or a path blew up."""


class RegressionBasisError(LevyLabError):
    """Least-squares design matrix is unusable (rank deficient)."""


class CoarseGridError(LevyLabError):
    """A discretization grid is too coarse for the requested operation."""


class ConfigError(LevyLabError):
    """Malformed experiment configuration."""


class TruncationWarning(UserWarning):
    """Lattice truncation leaks more mass than the declared guard."""
