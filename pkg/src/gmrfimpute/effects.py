"""Imputation latent effects for covariates with missing entries.

A covariate with gaps becomes a latent Gaussian vector arranged as
(missing block, observed block): the observed entries are pinned at their
recorded values with a very large precision, the missing entries follow
the conditional Gaussian implied by the chosen imputation sub-model
(linear regression on fully observed covariates, or a proper CAR field
over an adjacency graph). Cross-block precision entries are exactly zero,
and the permutation back to data order is stored on the effect.
"""

from __future__ import annotations

import weakref

import numpy as np

from .errors import AllMissingCovariate, DimensionMismatch
from .gmrf import (
    GaussianBlock,
    IndexPartition,
    SparsePrecision,
    condition,
    marginal_obs_logdensity,
)
from .priors import (
    DEFAULT_PINNING_PRECISION,
    log_gamma_tau_prior,
    log_logit_rho_prior,
    log_normal_prior,
    logit,
)

# Adjacency matrices already passed through scale_adjacency get their
# spectral radius certified once per object, not once per hyper point.
_RADIUS_CERTIFIED = weakref.WeakKeyDictionary()


class CovariateWithGaps:
    """A real covariate vector plus its missingness partition."""

    __slots__ = ("values", "partition")

    def __init__(self, values, missing_mask=None):
        values = np.asarray(values, dtype=np.float64).ravel()
        if missing_mask is None:
            missing_mask = np.isnan(values)
        mask = np.asarray(missing_mask, dtype=bool).ravel()
        if mask.shape != values.shape:
            raise DimensionMismatch("mask length must match values length")
        if values.size and mask.all():
            raise AllMissingCovariate("covariate has no observed entries")
        if np.any(np.isnan(values[~mask])):
            raise DimensionMismatch("observed entries must be finite")
        clean = values.copy()
        clean[mask] = np.nan
        clean.setflags(write=False)
        self.values = clean
        self.partition = IndexPartition.from_mask(mask)

    @property
    def n(self) -> int:
        return int(self.partition.n)

    @property
    def observed_values(self) -> np.ndarray:
        return self.values[self.partition.obs]


class LinRegImputationSpec:
    """Linear-regression imputation: mean X beta, precision tau * I.

    The design matrix is fully observed with the intercept column first.
    Internal scales: beta as-is, log tau.
    """

    __slots__ = ("design", "beta", "tau")

    def __init__(self, design, beta, tau):
        design = np.asarray(design, dtype=np.float64)
        beta = np.asarray(beta, dtype=np.float64).ravel()
        if design.ndim != 2:
            raise DimensionMismatch("design must be a matrix")
        if np.any(np.isnan(design)):
            raise DimensionMismatch("design must be fully observed")
        if design.shape[1] != beta.size:
            raise DimensionMismatch("beta length must match design columns")
        if not tau > 0:
            raise DimensionMismatch(f"tau must be positive, got {tau}")
        self.design = design
        self.beta = beta
        self.tau = float(tau)

    @property
    def n_hyper(self) -> int:
        return self.beta.size + 1


class CarImputationSpec:
    """Proper CAR imputation: mean alpha * 1, precision tau * (I - rho * W).

    The adjacency must be pre-scaled to spectral radius 1 (scale_adjacency),
    which keeps the precision positive definite for rho in (0, 1).
    Internal scales: log tau, logit rho, alpha as-is.
    """

    __slots__ = ("adjacency", "alpha", "tau", "rho")

    def __init__(self, adjacency: SparsePrecision, alpha, tau, rho):
        if not 0.0 < rho < 1.0:
            raise DimensionMismatch(f"rho must lie in (0, 1), got {rho}")
        if not tau > 0:
            raise DimensionMismatch(f"tau must be positive, got {tau}")
        if adjacency not in _RADIUS_CERTIFIED:
            radius = _power_radius(adjacency)
            if radius > 1.0 + 1e-8:
                raise DimensionMismatch(
                    f"adjacency spectral radius {radius:.6f} exceeds 1; "
                    "run scale_adjacency first")
            _RADIUS_CERTIFIED[adjacency] = True
        self.adjacency = adjacency
        self.alpha = float(alpha)
        self.tau = float(tau)
        self.rho = float(rho)

    @property
    def n_hyper(self) -> int:
        return 3

    def full_precision(self) -> SparsePrecision:
        w = self.adjacency
        idx = np.arange(w.dim)
        return SparsePrecision(
            w.dim,
            np.concatenate([idx, w.rows]),
            np.concatenate([idx, w.cols]),
            np.concatenate([np.ones(w.dim), -self.rho * w.vals]),
        ).scaled(self.tau)


def _power_radius(w: SparsePrecision, max_iter: int = 2000) -> float:
    x = np.full(w.dim, 1.0 / np.sqrt(w.dim))
    lam = 0.0
    for _ in range(max_iter):
        y = w.matvec(x)
        lam_new = float(np.linalg.norm(y))
        if lam_new == 0.0:
            return 0.0
        x = y / lam_new
        if abs(lam_new - lam) <= 1e-10 * lam_new:
            return lam_new
        lam = lam_new
    return lam


class ImputationEffect:
    """The joint latent block for one covariate, in (missing, observed) order.

    joint holds the full n-dimensional Gaussian: the missing sub-block is
    the imputation model's conditional, the observed sub-block is pinned at
    the recorded values. order maps joint positions to data indices and
    position_of is its inverse.
    """

    __slots__ = ("joint", "order", "position_of", "n_mis", "missing_block",
                 "pinning_precision")

    def __init__(self, joint: GaussianBlock, order, n_mis: int,
                 missing_block, pinning_precision: float):
        order = np.asarray(order, dtype=np.int64)
        if order.size != joint.dim:
            raise DimensionMismatch("order must enumerate every joint position")
        pos = np.empty_like(order)
        pos[order] = np.arange(order.size)
        order.setflags(write=False)
        pos.setflags(write=False)
        self.joint = joint
        self.order = order
        self.position_of = pos
        self.n_mis = int(n_mis)
        self.missing_block = missing_block
        self.pinning_precision = float(pinning_precision)

    @property
    def n(self) -> int:
        return int(self.joint.dim)

    def to_data_order(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(np.asarray(v, dtype=np.float64))
        out[self.order] = v
        return out

    def to_block_order(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=np.float64)[self.order]


def _assemble_effect(cov: CovariateWithGaps, missing_block,
                     pinning_precision: float) -> ImputationEffect:
    part = cov.partition
    n_mis = part.mis.size
    order = np.concatenate([part.mis, part.obs])
    mean = np.empty(part.n)
    mean[n_mis:] = cov.values[part.obs]
    pinned = np.arange(n_mis, part.n)
    rows, cols = [pinned], [pinned]
    vals = [np.full(part.n - n_mis, pinning_precision)]
    if n_mis:
        mean[:n_mis] = missing_block.mean
        prec = missing_block.precision
        rows.append(prec.rows)
        cols.append(prec.cols)
        vals.append(prec.vals)
    joint_precision = SparsePrecision(
        part.n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))
    joint = GaussianBlock(mean, joint_precision)
    return ImputationEffect(joint, order, n_mis, missing_block, pinning_precision)


def build_linreg_effect(cov: CovariateWithGaps, spec: LinRegImputationSpec,
                        pinning_precision: float = DEFAULT_PINNING_PRECISION,
                        ) -> ImputationEffect:
    """Imputation effect under the linear-regression sub-model."""
    if spec.design.shape[0] != cov.n:
        raise DimensionMismatch("design rows must match covariate length")
    part = cov.partition
    if part.mis.size == 0:
        return _assemble_effect(cov, None, pinning_precision)
    x_mis = spec.design[part.mis]
    block = GaussianBlock(x_mis @ spec.beta,
                          SparsePrecision.identity(part.mis.size, spec.tau))
    return _assemble_effect(cov, block, pinning_precision)


def build_car_effect(cov: CovariateWithGaps, spec: CarImputationSpec,
                     pinning_precision: float = DEFAULT_PINNING_PRECISION,
                     ) -> ImputationEffect:
    """Imputation effect under the CAR sub-model, via conditioning on obs."""
    if spec.adjacency.dim != cov.n:
        raise DimensionMismatch("adjacency dim must match covariate length")
    part = cov.partition
    if part.mis.size == 0:
        return _assemble_effect(cov, None, pinning_precision)
    mu = np.full(cov.n, spec.alpha)
    block = condition(mu, spec.full_precision(), part, cov.observed_values)
    return _assemble_effect(cov, block, pinning_precision)


def informative_prior_logdensity(cov: CovariateWithGaps, spec) -> float:
    """Log of the data-informed hyper prior pi(z_obs | theta) pi(theta).

    The first term is the marginal likelihood of the observed covariate
    entries under the imputation sub-model with the missing ones
    integrated out; the second is the base prior on the sub-model's
    hyperparameters, expressed on the internal scale (Jacobians included).
    The normalizing constant over theta is dropped.
    """
    part = cov.partition
    if isinstance(spec, LinRegImputationSpec):
        if spec.design.shape[0] != cov.n:
            raise DimensionMismatch("design rows must match covariate length")
        log_prior = sum(log_normal_prior(b) for b in spec.beta)
        log_prior += log_gamma_tau_prior(np.log(spec.tau))
        if cov.n == 0:
            return log_prior
        mu = spec.design @ spec.beta
        q = SparsePrecision.identity(cov.n, spec.tau)
    elif isinstance(spec, CarImputationSpec):
        if spec.adjacency.dim != cov.n:
            raise DimensionMismatch("adjacency dim must match covariate length")
        log_prior = (log_gamma_tau_prior(np.log(spec.tau))
                     + log_logit_rho_prior(float(logit(spec.rho)))
                     + log_normal_prior(spec.alpha))
        mu = np.full(cov.n, spec.alpha)
        q = spec.full_precision()
    else:
        raise DimensionMismatch(f"unknown imputation spec {type(spec).__name__}")
    return log_prior + marginal_obs_logdensity(mu, q, part, cov.observed_values)
