"""Exception types shared across the package.

Numerical failures are split from usage failures: NotPositiveDefinite and
NewtonDiverged signal a bad hyperparameter point (the engine maps them to a
log-posterior of -inf and keeps exploring), while DimensionMismatch and
friends signal caller bugs and always propagate.
"""


class GmrfImputeError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(GmrfImputeError):
    """A matrix required to be positive definite failed factorization."""


class DimensionMismatch(GmrfImputeError):
    """Vector/matrix shapes disagree."""


class EmptyMissingSet(GmrfImputeError):
    """A conditioning call found nothing to condition on (no missing indices)."""


class ZeroMatrix(GmrfImputeError):
    """An adjacency matrix with no nonzero entries cannot be scaled."""


class NewtonDiverged(GmrfImputeError):
    """The inner Newton optimization failed to converge."""


class ExplorationFailed(GmrfImputeError):
    """The hyperparameter optimizer never found a finite posterior value."""


class ChainDiverged(GmrfImputeError):
    """An MCMC chain reached a non-finite state."""


class MissingEffectReference(GmrfImputeError):
    """A missingness sub-model references an imputation effect the model lacks."""


class ProportionOutOfRange(GmrfImputeError):
    """A missingness proportion falls outside (0, 1)."""


class AllMissingCovariate(GmrfImputeError):
    """A covariate with no observed entries cannot drive an imputation model."""


class ParseError(GmrfImputeError):
    """A data or config file failed to parse; message carries row/column info."""


class ConfigError(GmrfImputeError):
    """A run configuration is inconsistent or incomplete."""


class EmptyInput(GmrfImputeError):
    """An operation that needs at least one element received none."""


class DegenerateTable(UserWarning):
    """A stratum with no observed units fell back to marginal frequencies."""
