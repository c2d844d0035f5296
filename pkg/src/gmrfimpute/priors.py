"""Base hyperparameter priors and internal-scale transforms.

The engine explores an unconstrained internal space: precisions enter as
log tau, spatial dependence as logit rho, regression coefficients as-is.
Priors that are declared on the natural scale (the Gamma on tau) carry
their change-of-variables Jacobian here so callers never see it.
"""

from __future__ import annotations

import math

import numpy as np

# Weakly informative defaults: coefficients get a zero-mean normal with
# small precision, precisions get a flat-ish Gamma.
FIXED_EFFECT_PRECISION = 0.001
TAU_PRIOR_SHAPE = 1.0
TAU_PRIOR_RATE = 5e-5
RHO_LOGIT_PRECISION = 0.001

DEFAULT_PINNING_PRECISION = 1e10


def log_normal_prior(x: float, precision: float = FIXED_EFFECT_PRECISION) -> float:
    """Log-density of N(0, 1/precision) at x."""
    return 0.5 * (np.log(precision) - np.log(2.0 * np.pi)) - 0.5 * precision * x * x


def log_gamma_tau_prior(log_tau: float, shape: float = TAU_PRIOR_SHAPE,
                        rate: float = TAU_PRIOR_RATE) -> float:
    """Log prior of tau ~ Gamma(shape, rate) expressed in log tau.

    Includes the +log_tau Jacobian of the tau -> log tau change of
    variables, so this is a proper density on the internal scale.
    """
    tau = np.exp(log_tau)
    log_gamma = (shape * np.log(rate) - math.lgamma(shape)
                 + (shape - 1.0) * log_tau - rate * tau)
    return log_gamma + log_tau


def log_logit_rho_prior(logit_rho: float,
                        precision: float = RHO_LOGIT_PRECISION) -> float:
    """Log prior of logit(rho) ~ N(0, 1/precision); already internal scale."""
    return log_normal_prior(logit_rho, precision)


def expit(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)
