"""Metropolis-within-Gibbs verification sampler for joint models.

Deliberately independent of the Laplace machinery so the two can check
each other. Latent coordinates whose active likelihood rows are all
Gaussian are drawn exactly from their joint conditional; pinned entries
facing non-Gaussian rows get independence proposals from their Gaussian
part (acceptance is then the non-Gaussian likelihood ratio, near 1 at
pinning precision); remaining coordinates move by per-coordinate
adaptive random walks targeting 0.44 acceptance, adaptation in batches
of 50 and frozen at burn-in. Hyperparameters update one coordinate at a
time on the internal scale, recomputing only the terms they touch.

Per-row log-likelihoods drop observation constants (they cancel in
every Metropolis ratio). Sub-model hyper moves for linear-regression
imputation effects use the closed diagonal-Gaussian forms instead of
the generic factorization path; they are algebraically identical and
the setup asserts agreement at the starting state.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla

from .effects import build_car_effect, informative_prior_logdensity
from .errors import ChainDiverged, DimensionMismatch, NotPositiveDefinite
from .gmrf import factorize
from .model import BERNOULLI, GAUSSIAN, POISSON, ModelSpec
from .priors import (
    log_gamma_tau_prior,
    log_logit_rho_prior,
    log_normal_prior,
)

ADAPT_BATCH = 50
TARGET_RATE = 0.44
LOG_2PI = math.log(2.0 * math.pi)


def mcse(draws) -> float:
    """Batch-means Monte Carlo standard error of the mean of one chain."""
    draws = np.asarray(draws, dtype=np.float64).ravel()
    n = draws.size
    if n < 4:
        raise DimensionMismatch("need at least 4 draws for batch means")
    b = int(np.sqrt(n))
    nb = n // b
    means = draws[: nb * b].reshape(nb, b).mean(axis=1)
    return float(np.sqrt(np.var(means, ddof=1) / nb))


def _row_loglik(fam, y, eta, tau_y):
    """Per-row log-likelihood up to y-only constants."""
    out = np.empty_like(eta)
    g = fam == GAUSSIAN
    if np.any(g):
        out[g] = 0.5 * (np.log(tau_y) - LOG_2PI) - 0.5 * tau_y * (y[g] - eta[g]) ** 2
    p = fam == POISSON
    if np.any(p):
        out[p] = y[p] * eta[p] - np.exp(eta[p])
    b = fam == BERNOULLI
    if np.any(b):
        out[b] = y[b] * eta[b] - np.logaddexp(0.0, eta[b])
    return out


class _EffectState:
    """Current imputation-effect conditional and its cached pieces."""

    __slots__ = ("mu_mis", "qc_dense", "log_det", "informative", "lin_tau")

    def __init__(self, mu_mis, qc_dense, log_det, informative, lin_tau=None):
        self.mu_mis = mu_mis
        self.qc_dense = qc_dense
        self.log_det = log_det
        self.informative = informative
        self.lin_tau = lin_tau

    def logpdf(self, x_mis) -> float:
        n = x_mis.size
        if n == 0:
            return 0.0
        r = x_mis - self.mu_mis
        return 0.5 * (self.log_det - n * LOG_2PI) - 0.5 * float(r @ (self.qc_dense @ r))


def _linreg_state(decl, theta_sub, cov) -> _EffectState:
    beta = theta_sub[:-1]
    tau = float(np.exp(theta_sub[-1]))
    part = cov.partition
    mu_mis = decl.design[part.mis] @ beta
    n_mis = part.mis.size
    qc = tau * np.eye(n_mis)
    log_det = n_mis * float(np.log(tau))
    # diagonal model: observed marginal is a plain product of normals
    resid = cov.observed_values - decl.design[part.obs] @ beta
    informative = float(np.sum(0.5 * (np.log(tau) - LOG_2PI)
                               - 0.5 * tau * resid ** 2))
    informative += sum(log_normal_prior(float(b)) for b in beta)
    informative += log_gamma_tau_prior(float(theta_sub[-1]))
    return _EffectState(mu_mis, qc, log_det, informative, lin_tau=tau)


def _car_state(decl, theta_sub, cov, pinning) -> _EffectState:
    spec = decl.spec_from_internal(theta_sub)
    eff = build_car_effect(cov, spec, pinning)
    if eff.n_mis:
        block = eff.missing_block
        log_det = factorize(block.precision).log_det
        qc = block.precision.to_dense()
        mu_mis = block.mean
    else:
        log_det, qc, mu_mis = 0.0, np.zeros((0, 0)), np.zeros(0)
    informative = informative_prior_logdensity(cov, spec)
    return _EffectState(mu_mis, qc, log_det, informative)


def _effect_state(decl, theta_sub, pinning) -> _EffectState:
    if decl.kind == "linreg":
        return _linreg_state(decl, theta_sub, decl.cov)
    return _car_state(decl, theta_sub, decl.cov, pinning)


class _Chain:
    """Mutable sampler state over one ModelSpec."""

    def __init__(self, model: ModelSpec, rng):
        self.model = model
        self.rng = rng
        self.theta = model.theta_init()
        built = model.build_effects(self.theta)
        mu, qp, _ = model.latent_prior(self.theta, built)
        self.mu = mu
        self.qp = qp
        self.x = mu.copy()
        self.pos = [eff.position_of.copy() for eff in built]

        self.eff_states = []
        self.eff_layout = []
        for k, (decl, eff) in enumerate(zip(model.effects, built)):
            off = model.effect_offsets[k]
            layout = {
                "decl": decl,
                "mis_lat": off + np.arange(eff.n_mis),
                "obs_lat": off + np.arange(eff.n_mis, eff.n),
                "z_obs": decl.cov.observed_values,
                "slice": model.submodel_slices[k],
            }
            self.eff_layout.append(layout)
            state = _effect_state(decl, self.theta[layout["slice"]],
                                  model.pinning_precision)
            self.eff_states.append(state)
        self.a = self._rebuild_a()
        self.eta = self.a @ self.x + model.offsets

        fam = model.families
        active = model.active
        inc = [set() for _ in range(model.n_latent)]
        for k, decl in enumerate(model.effects):
            off = model.effect_offsets[k]
            pos = self.pos[k]
            for link in decl.links:
                for r, di in zip(link.rows, link.data_index):
                    if active[r]:
                        inc[off + pos[di]].add(int(r))
        for c in range(model.n_fixed):
            col = model.fixed_design[:, c]
            for r in np.nonzero(col)[0]:
                if active[r]:
                    inc[model.fixed_offset + c].add(int(r))
        self.gauss_rows = np.where(active & (fam == GAUSSIAN))[0]

        pinned = np.zeros(model.n_latent, dtype=bool)
        pin_mean = np.zeros(model.n_latent)
        for layout in self.eff_layout:
            pinned[layout["obs_lat"]] = True
            pin_mean[layout["obs_lat"]] = layout["z_obs"]
        gaussian_only = np.array(
            [all(fam[r] == GAUSSIAN for r in inc[j]) for j in range(model.n_latent)])

        self.g_idx = np.where(gaussian_only)[0]
        self.p_idx = np.where(pinned & ~gaussian_only)[0]
        self.f_idx = np.where(~pinned & ~gaussian_only)[0]
        self.pin_mean = pin_mean

        # flat (group position, row) pairs for the pinned independence group
        gp, gr, npos, nr = [], [], [], []
        for i, j in enumerate(self.p_idx):
            for r in sorted(inc[j]):
                if fam[r] == GAUSSIAN:
                    gp.append(i)
                    gr.append(r)
                else:
                    npos.append(i)
                    nr.append(r)
        self.pin_gpos = np.array(gp, dtype=np.int64)
        self.pin_grow = np.array(gr, dtype=np.int64)
        self.pin_npos = np.array(npos, dtype=np.int64)
        self.pin_nrow = np.array(nr, dtype=np.int64)

        self.free = []
        for j in self.f_idx:
            rows = np.array(sorted(inc[j]), dtype=np.int64)
            self.free.append({
                "j": int(j),
                "rows": rows,
                "rows_g": rows[fam[rows] == GAUSSIAN],
                "rows_n": rows[fam[rows] != GAUSSIAN],
            })

        tau0 = model.gaussian_tau(self.theta)
        self.log_step_f = np.zeros(len(self.free))
        for i, info in enumerate(self.free):
            j = info["j"]
            curv = self.qp[j, j]
            for r in info["rows"]:
                a = self.a[r, j]
                if fam[r] == GAUSSIAN:
                    curv += tau0 * a * a
                elif fam[r] == POISSON:
                    curv += float(np.exp(self.eta[r])) * a * a
                else:
                    curv += 0.25 * a * a
            self.log_step_f[i] = -0.5 * float(np.log(max(curv, 1e-8)))
        self.acc_f = np.zeros(len(self.free))

        self.hyper_kind = []
        if model.has_lik_hyper:
            self.hyper_kind.append(("lik", None))
        for k, decl in enumerate(model.effects):
            if model.copy_index[k] is not None:
                self.hyper_kind.append(("coef", (k, "copy")))
            for idx in range(decl.n_submodel_hyper):
                self.hyper_kind.append(("sub", (k, idx)))
        if model.has_delta:
            self.hyper_kind.append(("coef", (None, "delta")))
        assert len(self.hyper_kind) == model.n_hyper

        # flat (active row, latent index) pairs per shared coefficient
        self.coef_pairs = {}
        for k, decl in enumerate(model.effects):
            off = model.effect_offsets[k]
            pos = self.pos[k]
            for kind in ("copy", "delta"):
                rows, lats = [], []
                for link in decl.links:
                    if link.coefficient != kind:
                        continue
                    keep = active[link.rows]
                    rows.extend(link.rows[keep])
                    lats.extend(off + pos[link.data_index[keep]])
                if rows:
                    key = (k, kind) if kind == "copy" else (None, "delta")
                    prev = self.coef_pairs.get(key, (np.empty(0, np.int64),) * 2)
                    self.coef_pairs[key] = (
                        np.concatenate([prev[0], np.array(rows, np.int64)]),
                        np.concatenate([prev[1], np.array(lats, np.int64)]))
        self.log_step_h = np.full(model.n_hyper, np.log(0.1))
        self.acc_h = np.zeros(model.n_hyper)
        self.sweeps = 0
        self.batches = 0

        # the closed-form linreg state must agree with the generic prior path
        for k, decl in enumerate(model.effects):
            if decl.kind == "linreg":
                generic = decl.informative_prior(self.theta[self.eff_layout[k]["slice"]])
                assert abs(self.eff_states[k].informative - generic) < 1e-8

    def _rebuild_a(self) -> np.ndarray:
        m = self.model
        a = np.zeros((m.n_rows, m.n_latent))
        for k, decl in enumerate(m.effects):
            off = m.effect_offsets[k]
            pos = self.pos[k]
            for link in decl.links:
                if link.coefficient == "copy":
                    coef = (self.theta[m.copy_index[k]]
                            if m.copy_index[k] is not None else 1.0)
                elif link.coefficient == "delta":
                    coef = self.theta[m.delta_index]
                else:
                    coef = float(link.coefficient)
                a[link.rows, off + pos[link.data_index]] += coef
        a[:, m.fixed_offset:] = m.fixed_design
        return a

    # -- latent updates -------------------------------------------------------

    def _draw_conjugate_block(self, tau_y):
        g = self.g_idx
        if g.size == 0:
            return
        y = self.model.responses
        ag = self.a[np.ix_(self.gauss_rows, g)]
        prec = self.qp[np.ix_(g, g)] + tau_y * ag.T @ ag
        resid = tau_y * (y[self.gauss_rows] - self.eta[self.gauss_rows])
        grad = ag.T @ resid - (self.qp @ (self.x - self.mu))[g]
        chol = sla.cho_factor(prec, lower=True)
        mean = self.x[g] + sla.cho_solve(chol, grad)
        z = self.rng.standard_normal(g.size)
        self.x[g] = mean + sla.solve_triangular(chol[0].T, z, lower=False)
        self.eta = self.a @ self.x + self.model.offsets

    def _update_pinned(self, tau_y):
        p = self.p_idx
        if p.size == 0:
            return
        y = self.model.responses
        fam = self.model.families
        kappa = self.model.pinning_precision
        xp = self.x[p]
        prec = np.full(p.size, kappa)
        grad = -kappa * (xp - self.pin_mean[p])
        if self.pin_gpos.size:
            ag = self.a[self.pin_grow, p[self.pin_gpos]]
            np.add.at(prec, self.pin_gpos, tau_y * ag * ag)
            np.add.at(grad, self.pin_gpos,
                      ag * tau_y * (y[self.pin_grow] - self.eta[self.pin_grow]))
        mean = xp + grad / prec
        v = mean + self.rng.standard_normal(p.size) / np.sqrt(prec)
        delta = np.zeros(p.size)
        if self.pin_npos.size:
            an = self.a[self.pin_nrow, p[self.pin_npos]]
            eta_old = self.eta[self.pin_nrow]
            eta_new = eta_old + an * (v - xp)[self.pin_npos]
            fam_n = fam[self.pin_nrow]
            y_n = y[self.pin_nrow]
            diff = (_row_loglik(fam_n, y_n, eta_new, tau_y)
                    - _row_loglik(fam_n, y_n, eta_old, tau_y))
            np.add.at(delta, self.pin_npos, diff)
        accept = np.log(self.rng.uniform(size=p.size)) < delta
        self.x[p[accept]] = v[accept]
        self.eta = self.a @ self.x + self.model.offsets

    def _update_free(self, tau_y, adapt):
        if not self.free:
            return
        y = self.model.responses
        fam = self.model.families
        qp_x = self.qp @ (self.x - self.mu)
        for i, info in enumerate(self.free):
            j = info["j"]
            d = math.exp(self.log_step_f[i]) * self.rng.standard_normal()
            delta = -0.5 * self.qp[j, j] * d * d - d * qp_x[j]
            rows_g = info["rows_g"]
            if rows_g.size:
                ag = self.a[rows_g, j]
                r = y[rows_g] - self.eta[rows_g]
                delta += float(np.sum(tau_y * ag * d * r
                                      - 0.5 * tau_y * ag * ag * d * d))
            rows_n = info["rows_n"]
            if rows_n.size:
                an = self.a[rows_n, j]
                fam_n = fam[rows_n]
                y_n = y[rows_n]
                delta += float(np.sum(
                    _row_loglik(fam_n, y_n, self.eta[rows_n] + an * d, tau_y)
                    - _row_loglik(fam_n, y_n, self.eta[rows_n], tau_y)))
            if math.log(self.rng.uniform()) < delta:
                self.x[j] += d
                rows = info["rows"]
                self.eta[rows] += self.a[rows, j] * d
                qp_x += self.qp[:, j] * d
                if adapt:
                    self.acc_f[i] += 1

    # -- hyperparameter updates -----------------------------------------------

    def _hyper_delta_lik(self, h, prop):
        y = self.model.responses
        rows = self.gauss_rows
        s = float(np.sum((y[rows] - self.eta[rows]) ** 2))
        old, new = self.theta[h], prop
        delta = 0.5 * rows.size * (new - old)
        delta -= 0.5 * (np.exp(new) - np.exp(old)) * s
        delta += log_gamma_tau_prior(new) - log_gamma_tau_prior(old)
        return delta, None

    def _hyper_delta_coef(self, h, prop, key, tau_y):
        rows, lats = self.coef_pairs.get(key, (np.empty(0, np.int64),) * 2)
        old = self.theta[h]
        delta = log_normal_prior(prop) - log_normal_prior(old)
        if rows.size:
            contrib = np.zeros(self.model.n_rows)
            np.add.at(contrib, rows, self.x[lats])
            urows = np.unique(rows)
            y_u = self.model.responses[urows]
            fam_u = self.model.families[urows]
            eta_new = self.eta[urows] + (prop - old) * contrib[urows]
            delta += float(np.sum(
                _row_loglik(fam_u, y_u, eta_new, tau_y)
                - _row_loglik(fam_u, y_u, self.eta[urows], tau_y)))
        return delta, None

    def _hyper_delta_sub(self, h, prop, k, idx):
        layout = self.eff_layout[k]
        sl = layout["slice"]
        theta_sub = self.theta[sl].copy()
        theta_sub[idx] = prop
        new_state = _effect_state(layout["decl"], theta_sub,
                                  self.model.pinning_precision)
        x_mis = self.x[layout["mis_lat"]]
        old_state = self.eff_states[k]
        delta = (new_state.logpdf(x_mis) + new_state.informative
                 - old_state.logpdf(x_mis) - old_state.informative)
        return delta, new_state

    def _apply_sub(self, k, new_state):
        layout = self.eff_layout[k]
        self.eff_states[k] = new_state
        mis = layout["mis_lat"]
        self.mu[mis] = new_state.mu_mis
        if mis.size:
            self.qp[np.ix_(mis, mis)] = new_state.qc_dense

    def _update_hypers(self, tau_y, adapt):
        for h, (kind, arg) in enumerate(self.hyper_kind):
            prop = self.theta[h] + math.exp(self.log_step_h[h]) * self.rng.standard_normal()
            new_state = None
            if kind == "lik":
                delta, _ = self._hyper_delta_lik(h, prop)
            elif kind == "coef":
                delta, _ = self._hyper_delta_coef(h, prop, arg, tau_y)
            else:
                k, idx = arg
                try:
                    delta, new_state = self._hyper_delta_sub(h, prop, k, idx)
                except (DimensionMismatch, NotPositiveDefinite):
                    delta = -np.inf
            if np.isfinite(delta) and math.log(self.rng.uniform()) < delta:
                self.theta[h] = prop
                if kind == "lik":
                    tau_y = self.model.gaussian_tau(self.theta)
                elif kind == "coef":
                    self.a = self._rebuild_a()
                    self.eta = self.a @ self.x + self.model.offsets
                else:
                    self._apply_sub(arg[0], new_state)
                if adapt:
                    self.acc_h[h] += 1
        return tau_y

    def _adapt_steps(self):
        self.batches += 1
        step = min(0.05, self.batches ** -0.5)
        rate_f = self.acc_f / ADAPT_BATCH
        self.log_step_f += np.where(rate_f > TARGET_RATE, step, -step)
        self.acc_f[:] = 0.0
        rate_h = self.acc_h / ADAPT_BATCH
        self.log_step_h += np.where(rate_h > TARGET_RATE, step, -step)
        self.acc_h[:] = 0.0

    def _check_finite(self):
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.theta))):
            raise ChainDiverged(f"non-finite state at sweep {self.sweeps}")

    def sweep(self, adapt: bool):
        self._check_finite()
        tau_y = self.model.gaussian_tau(self.theta)
        self.eta = self.a @ self.x + self.model.offsets
        self._draw_conjugate_block(tau_y)
        self._update_pinned(tau_y)
        self._update_free(tau_y, adapt)
        tau_y = self._update_hypers(tau_y, adapt)
        self.sweeps += 1
        if adapt and self.sweeps % ADAPT_BATCH == 0:
            self._adapt_steps()
        self._check_finite()


def mcmc_oracle(model: ModelSpec, n_iter: int, burn_in: int, rng) -> np.ndarray:
    """Posterior sample matrix, one row per kept sweep.

    Columns are model.latent_names followed by model.hyper_names, the
    hyperparameters on their internal scale. Deterministic under rng.
    """
    if n_iter <= burn_in:
        raise DimensionMismatch("n_iter must exceed burn_in")
    if burn_in < 0:
        raise DimensionMismatch("burn_in must be nonnegative")
    chain = _Chain(model, rng)
    out = np.empty((n_iter - burn_in, model.n_latent + model.n_hyper))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(n_iter):
            chain.sweep(adapt=t < burn_in)
            if t >= burn_in:
                out[t - burn_in, : model.n_latent] = chain.x
                out[t - burn_in, model.n_latent:] = chain.theta
    return out
