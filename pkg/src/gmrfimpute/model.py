"""Declarative joint models over likelihood rows and latent components.

A ModelSpec couples three layers:
  * likelihood rows: one response per row (Gaussian, Poisson with a log
    offset, or Bernoulli), missing responses allowed and inert;
  * a latent field x = (imputation effect blocks ..., fixed effects),
    Gaussian given the hyperparameters;
  * hyperparameters on an unconstrained internal scale, ordered as
    [likelihood] + per effect [copy coefficient, sub-model hypers] +
    [MNAR delta]. The ordering is part of the public contract.

Imputation effect latents enter linear predictors through copy links: a
row reads one latent entry scaled by the effect's copy coefficient (the
analysis-model coefficient of the imputed covariate) or by the shared
MNAR delta (the missingness feedback coefficient). Both are
hyperparameters because they multiply the latent field inside the
predictor, which keeps the field Gaussian at fixed theta.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .effects import (
    CarImputationSpec,
    CovariateWithGaps,
    LinRegImputationSpec,
    build_car_effect,
    build_linreg_effect,
    informative_prior_logdensity,
)
from .errors import DimensionMismatch
from .gmrf import factorize
from .priors import (
    DEFAULT_PINNING_PRECISION,
    FIXED_EFFECT_PRECISION,
    expit,
    log_gamma_tau_prior,
    log_normal_prior,
)

GAUSSIAN, POISSON, BERNOULLI = 0, 1, 2
FAMILY_CODES = {"gaussian": GAUSSIAN, "poisson": POISSON, "bernoulli": BERNOULLI}


class CopyLink:
    """Rows that read an imputation effect's latent entries.

    rows[k] gets coefficient * x_effect[data_index[k]] added to its linear
    predictor. coefficient is "copy" (the effect's analysis coefficient),
    "delta" (the shared MNAR feedback coefficient) or a fixed float.
    """

    __slots__ = ("rows", "data_index", "coefficient")

    def __init__(self, rows, data_index, coefficient):
        rows = np.asarray(rows, dtype=np.int64)
        data_index = np.asarray(data_index, dtype=np.int64)
        if rows.shape != data_index.shape:
            raise DimensionMismatch("rows and data_index must share a length")
        if not (isinstance(coefficient, (int, float))
                or coefficient in ("copy", "delta")):
            raise DimensionMismatch(f"bad coefficient spec {coefficient!r}")
        self.rows = rows
        self.data_index = data_index
        self.coefficient = coefficient


class EffectDecl:
    """One imputation latent effect plus its hyper slice definition."""

    __slots__ = ("name", "cov", "kind", "design", "adjacency", "links",
                 "has_copy", "submodel_names", "submodel_transforms")

    def __init__(self, name: str, cov: CovariateWithGaps, kind: str,
                 design=None, adjacency=None, links=(), has_copy=True):
        if kind == "linreg":
            design = np.asarray(design, dtype=np.float64)
            if design.shape[0] != cov.n:
                raise DimensionMismatch("design rows must match covariate length")
            self.submodel_names = [f"{name}.b{j}" for j in range(design.shape[1])]
            self.submodel_names.append(f"{name}.log_tau")
            self.submodel_transforms = ["identity"] * design.shape[1] + ["exp"]
        elif kind == "car":
            if adjacency is None or adjacency.dim != cov.n:
                raise DimensionMismatch("adjacency dim must match covariate length")
            self.submodel_names = [f"{name}.log_tau", f"{name}.logit_rho",
                                   f"{name}.alpha"]
            self.submodel_transforms = ["exp", "expit", "identity"]
        else:
            raise DimensionMismatch(f"unknown effect kind {kind!r}")
        self.name = name
        self.cov = cov
        self.kind = kind
        self.design = design
        self.adjacency = adjacency
        self.links = tuple(links)
        self.has_copy = bool(has_copy)

    @property
    def n_submodel_hyper(self) -> int:
        return len(self.submodel_names)

    def spec_from_internal(self, theta_sub):
        theta_sub = np.asarray(theta_sub, dtype=np.float64)
        if theta_sub.size != self.n_submodel_hyper:
            raise DimensionMismatch("wrong sub-model slice length")
        if self.kind == "linreg":
            return LinRegImputationSpec(self.design, theta_sub[:-1],
                                        float(np.exp(theta_sub[-1])))
        return CarImputationSpec(self.adjacency,
                                 alpha=float(theta_sub[2]),
                                 tau=float(np.exp(theta_sub[0])),
                                 rho=float(expit(theta_sub[1])))

    def build(self, theta_sub, pinning_precision):
        spec = self.spec_from_internal(theta_sub)
        if self.kind == "linreg":
            return build_linreg_effect(self.cov, spec, pinning_precision)
        return build_car_effect(self.cov, spec, pinning_precision)

    def informative_prior(self, theta_sub) -> float:
        return informative_prior_logdensity(self.cov,
                                            self.spec_from_internal(theta_sub))

    def submodel_init(self) -> list:
        """Moment/least-squares starting values on the internal scale."""
        z = self.cov.observed_values
        if self.kind == "linreg":
            x_obs = self.design[self.cov.partition.obs]
            beta, *_ = np.linalg.lstsq(x_obs, z, rcond=None)
            resid = z - x_obs @ beta
            dof = max(z.size - beta.size, 1)
            var = float(resid @ resid) / dof
            return list(beta) + [float(-np.log(max(var, 1e-8)))]
        var = float(np.var(z))
        return [float(-np.log(max(var, 1e-8))), 0.0, float(np.mean(z))]


class ModelSpec:
    """Immutable description of one joint model; see the module docstring."""

    def __init__(self, responses, families, fixed_design, fixed_names=None,
                 offsets=None, effects=(), fixed_gaussian_tau=None,
                 pinning_precision=DEFAULT_PINNING_PRECISION,
                 fixed_prior_precision=FIXED_EFFECT_PRECISION):
        responses = np.asarray(responses, dtype=np.float64).ravel()
        n_rows = responses.size
        if isinstance(families, str):
            families = [families] * n_rows
        fam = np.array([FAMILY_CODES[f] if isinstance(f, str) else int(f)
                        for f in families], dtype=np.int64)
        if fam.shape != (n_rows,):
            raise DimensionMismatch("families length must match responses")
        fixed_design = np.asarray(fixed_design, dtype=np.float64)
        if fixed_design.ndim != 2 or fixed_design.shape[0] != n_rows:
            raise DimensionMismatch("fixed design rows must match responses")
        if offsets is None:
            offsets = np.zeros(n_rows)
        offsets = np.asarray(offsets, dtype=np.float64).ravel()
        if offsets.shape != (n_rows,):
            raise DimensionMismatch("offsets length must match responses")
        if fixed_names is None:
            fixed_names = [f"fixed{j}" for j in range(fixed_design.shape[1])]
        if len(fixed_names) != fixed_design.shape[1]:
            raise DimensionMismatch("fixed_names length must match columns")

        self.responses = responses
        self.families = fam
        self.offsets = offsets
        self.fixed_design = fixed_design
        self.fixed_names = list(fixed_names)
        self.effects = tuple(effects)
        self.fixed_gaussian_tau = fixed_gaussian_tau
        self.pinning_precision = float(pinning_precision)
        self.fixed_prior_precision = float(fixed_prior_precision)

        self.n_rows = n_rows
        self.n_fixed = fixed_design.shape[1]
        active = np.isfinite(responses)
        self.active = active
        self.rows_gaussian = np.where(active & (fam == GAUSSIAN))[0]
        self.rows_poisson = np.where(active & (fam == POISSON))[0]
        self.rows_bernoulli = np.where(active & (fam == BERNOULLI))[0]
        if self.rows_bernoulli.size:
            vals = responses[self.rows_bernoulli]
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise DimensionMismatch("bernoulli responses must be 0/1")
        if self.rows_poisson.size:
            vals = responses[self.rows_poisson]
            if np.any(vals < 0) or np.any(vals != np.round(vals)):
                raise DimensionMismatch("poisson responses must be counts")
        # theta-independent part of the Poisson log-likelihood
        self._poisson_const = float(-np.sum(gammaln(responses[self.rows_poisson] + 1)))

        # latent layout: effect blocks in (mis, obs) order, then fixed effects
        self.effect_offsets = []
        off = 0
        for eff in self.effects:
            self.effect_offsets.append(off)
            off += eff.cov.n
        self.fixed_offset = off
        self.n_latent = off + self.n_fixed

        # hyper layout
        self.has_lik_hyper = (self.rows_gaussian.size > 0
                              and fixed_gaussian_tau is None)
        names, transforms = [], []
        if self.has_lik_hyper:
            names.append("lik.log_tau")
            transforms.append("exp")
        self.copy_index = []
        self.submodel_slices = []
        for eff in self.effects:
            if eff.has_copy:
                self.copy_index.append(len(names))
                names.append(f"{eff.name}.copy")
                transforms.append("identity")
            else:
                self.copy_index.append(None)
            start = len(names)
            names.extend(eff.submodel_names)
            transforms.extend(eff.submodel_transforms)
            self.submodel_slices.append(slice(start, len(names)))
        self.has_delta = any(
            link.coefficient == "delta" for eff in self.effects for link in eff.links)
        if self.has_delta:
            self.delta_index = len(names)
            names.append("mnar.delta")
            transforms.append("identity")
        else:
            self.delta_index = None
        self.hyper_names = names
        self.hyper_transforms = transforms
        self.n_hyper = len(names)

        # latent names in storage order (effect blocks keep data labels)
        latent_names = []
        for eff in self.effects:
            part = eff.cov.partition
            order = np.concatenate([part.mis, part.obs])
            latent_names.extend(f"{eff.name}[{int(i)}]" for i in order)
        latent_names.extend(self.fixed_names)
        self.latent_names = latent_names

        for eff in self.effects:
            for link in eff.links:
                if link.rows.size and (link.rows.min() < 0
                                       or link.rows.max() >= n_rows):
                    raise DimensionMismatch(f"link rows out of range in {eff.name}")
                if link.data_index.size and (link.data_index.min() < 0
                                             or link.data_index.max() >= eff.cov.n):
                    raise DimensionMismatch(f"link entries out of range in {eff.name}")
                if link.coefficient == "delta" and not self.has_delta:
                    raise DimensionMismatch("delta link without delta hyper")

        self._point_cache = {}

    # -- per-theta assembly -------------------------------------------------

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64).ravel()
        if theta.size != self.n_hyper:
            raise DimensionMismatch(
                f"theta has {theta.size} entries, model wants {self.n_hyper}")
        return theta

    def gaussian_tau(self, theta) -> float:
        if self.fixed_gaussian_tau is not None:
            return float(self.fixed_gaussian_tau)
        if not self.has_lik_hyper:
            return 1.0
        return float(np.exp(theta[0]))

    def build_effects(self, theta):
        return [eff.build(theta[self.submodel_slices[k]], self.pinning_precision)
                for k, eff in enumerate(self.effects)]

    def latent_prior(self, theta, built):
        """Dense (mu, Q, log det Q) of the latent field at theta."""
        n = self.n_latent
        mu = np.zeros(n)
        q = np.zeros((n, n))
        log_det = 0.0
        for eff_decl, eff, off in zip(self.effects, built, self.effect_offsets):
            mu[off:off + eff.n] = eff.joint.mean
            prec = eff.joint.precision
            q[off + prec.rows, off + prec.cols] += prec.vals
            mirror = prec.rows != prec.cols
            q[off + prec.cols[mirror], off + prec.rows[mirror]] += prec.vals[mirror]
            n_obs = eff.n - eff.n_mis
            log_det += n_obs * np.log(eff.pinning_precision)
            if eff.n_mis:
                log_det += factorize(eff.missing_block.precision).log_det
        fi = np.arange(self.fixed_offset, n)
        q[fi, fi] += self.fixed_prior_precision
        log_det += self.n_fixed * np.log(self.fixed_prior_precision)
        return mu, q, log_det

    def loading_matrix(self, theta, built) -> np.ndarray:
        """Dense A with linear predictor eta = A x + offsets."""
        a = np.zeros((self.n_rows, self.n_latent))
        for k, (eff_decl, eff) in enumerate(zip(self.effects, built)):
            off = self.effect_offsets[k]
            for link in eff_decl.links:
                if link.coefficient == "copy":
                    coef = theta[self.copy_index[k]] if self.copy_index[k] is not None else 1.0
                elif link.coefficient == "delta":
                    coef = theta[self.delta_index]
                else:
                    coef = float(link.coefficient)
                a[link.rows, off + eff.position_of[link.data_index]] += coef
        a[:, self.fixed_offset:] = self.fixed_design
        return a

    def log_prior_theta(self, theta) -> float:
        """Base priors plus data-informed imputation priors, internal scale."""
        total = 0.0
        if self.has_lik_hyper:
            total += log_gamma_tau_prior(float(theta[0]))
        for k, eff in enumerate(self.effects):
            if self.copy_index[k] is not None:
                total += log_normal_prior(float(theta[self.copy_index[k]]))
            total += eff.informative_prior(theta[self.submodel_slices[k]])
        if self.has_delta:
            total += log_normal_prior(float(theta[self.delta_index]))
        return total

    def theta_init(self) -> np.ndarray:
        parts = []
        if self.has_lik_hyper:
            y = self.responses[self.rows_gaussian]
            parts.append(-np.log(max(float(np.var(y)), 1e-8)))
        for k, eff in enumerate(self.effects):
            if self.copy_index[k] is not None:
                parts.append(0.0)
            parts.extend(eff.submodel_init())
        if self.has_delta:
            parts.append(0.0)
        return np.array(parts, dtype=np.float64)

    # -- likelihood ----------------------------------------------------------

    def loglik_terms(self, eta, theta):
        """(sum log-lik, gradient, curvature) of the likelihood at eta.

        Gradient and curvature are with respect to eta, per row; inactive
        rows (missing response) contribute zeros throughout. Curvature is
        the negated second derivative, floored at 1e-10 on Bernoulli rows.
        """
        g = np.zeros(self.n_rows)
        c = np.zeros(self.n_rows)
        total = 0.0
        ig = self.rows_gaussian
        if ig.size:
            tau = self.gaussian_tau(theta)
            r = self.responses[ig] - eta[ig]
            total += 0.5 * ig.size * (np.log(tau) - np.log(2 * np.pi))
            total += -0.5 * tau * float(r @ r)
            g[ig] = tau * r
            c[ig] = tau
        ip = self.rows_poisson
        if ip.size:
            lam = np.exp(eta[ip])
            y = self.responses[ip]
            total += float(y @ eta[ip] - np.sum(lam)) + self._poisson_const
            g[ip] = y - lam
            c[ip] = lam
        ib = self.rows_bernoulli
        if ib.size:
            e = eta[ib]
            y = self.responses[ib]
            total += float(y @ e - np.sum(np.logaddexp(0.0, e)))
            p = expit(e)
            g[ib] = y - p
            c[ib] = np.maximum(p * (1.0 - p), 1e-10)
        return total, g, c
