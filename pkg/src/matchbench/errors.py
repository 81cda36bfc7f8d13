"""Exception hierarchy shared across the package.

The CLI maps these to exit codes: configuration problems exit with 2,
numerical failures with 3.
"""

from __future__ import annotations


class MatchbenchError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MatchbenchError):
    """Invalid configuration file or inconsistent run parameters."""


class NumericalError(MatchbenchError):
    """A numerical procedure failed (degenerate input, non-convergence)."""


class DegenerateIndexError(NumericalError):
    """An index series has zero variance and cannot be ranked or regressed."""


class QuadratureConvergenceError(NumericalError):
    """Adaptive quadrature hit the maximum refinement depth."""


class RankRejectionError(MatchbenchError):
    """Single-index weight recovery rejected: the affinity matrix is not rank one.

    Carries the observed singular value profile so callers can report why
    sorting appears to be multi-dimensional.
    """

    def __init__(self, message: str, lambdas, numerical_rank: int):
        super().__init__(message)
        self.lambdas = lambdas
        self.numerical_rank = numerical_rank
