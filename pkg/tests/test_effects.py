"""Imputation latent effects against direct-formula and dense oracles."""

import numpy as np
import pytest
import scipy.stats

from gmrfimpute.effects import (
    CarImputationSpec,
    CovariateWithGaps,
    ImputationEffect,
    LinRegImputationSpec,
    build_car_effect,
    build_linreg_effect,
    informative_prior_logdensity,
)
from gmrfimpute.errors import AllMissingCovariate, DimensionMismatch
from gmrfimpute.gmrf import (
    IndexPartition,
    SparsePrecision,
    condition,
    factorize,
    gmrf_logdensity,
    sample,
    scale_adjacency,
)
from gmrfimpute.priors import (
    log_gamma_tau_prior,
    log_logit_rho_prior,
    log_normal_prior,
    logit,
)


def path_graph(n):
    idx = np.arange(n - 1)
    return SparsePrecision(n, idx, idx + 1, np.ones(n - 1))


def car_precision_dense(adj_scaled, tau, rho):
    return tau * (np.eye(adj_scaled.dim) - rho * adj_scaled.to_dense())


class TestCovariateWithGaps:
    def test_nan_mask_inferred(self):
        cov = CovariateWithGaps([1.0, np.nan, 3.0])
        assert np.array_equal(cov.partition.mis, [1])
        assert np.array_equal(cov.partition.obs, [0, 2])
        assert np.allclose(cov.observed_values, [1.0, 3.0])

    def test_explicit_mask_overrides_values(self):
        cov = CovariateWithGaps([1.0, 2.0, 3.0], missing_mask=[False, True, False])
        assert np.array_equal(cov.partition.mis, [1])
        assert np.isnan(cov.values[1])

    def test_all_missing_rejected(self):
        with pytest.raises(AllMissingCovariate):
            CovariateWithGaps([np.nan, np.nan])

    def test_nan_marked_observed_rejected(self):
        with pytest.raises(DimensionMismatch):
            CovariateWithGaps([np.nan, 1.0], missing_mask=[False, False])


class TestLinRegEffect:
    def test_age_group_prior_mean(self):
        # subject in the oldest of three groups: mean is intercept plus the
        # third-group offset, 30 - 7 = 23
        design = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 1.0]])
        cov = CovariateWithGaps([28.0, np.nan])
        spec = LinRegImputationSpec(design, [30.0, -5.0, -7.0], tau=0.06)
        eff = build_linreg_effect(cov, spec)
        assert eff.missing_block.mean[0] == pytest.approx(23.0)
        assert eff.missing_block.precision.to_dense()[0, 0] == pytest.approx(0.06)

    def test_no_missing_values_gives_pinned_identity(self):
        design = np.column_stack([np.ones(4), np.arange(4.0)])
        cov = CovariateWithGaps([3.0, 1.0, 4.0, 1.5])
        eff = build_linreg_effect(cov, LinRegImputationSpec(design, [0.0, 1.0], 2.0))
        assert eff.n_mis == 0
        assert eff.missing_block is None
        assert np.allclose(eff.joint.mean, [3.0, 1.0, 4.0, 1.5])
        assert np.allclose(eff.joint.precision.to_dense(), 1e10 * np.eye(4))

    def test_matches_conditioning_on_joint_diagonal_model(self):
        rng = np.random.default_rng(21)
        design = np.column_stack([np.ones(4), rng.standard_normal(4)])
        beta = rng.standard_normal(2)
        tau = 0.7
        values = design @ beta + rng.standard_normal(4)
        values[[1, 3]] = np.nan
        cov = CovariateWithGaps(values)
        eff = build_linreg_effect(cov, LinRegImputationSpec(design, beta, tau))
        # oracle: condition the fully specified diagonal joint on the observed
        mu_full = design @ beta
        q_full = SparsePrecision.identity(4, tau)
        block = condition(mu_full, q_full, cov.partition, cov.observed_values)
        assert np.allclose(eff.missing_block.mean, block.mean, atol=1e-12)
        assert np.allclose(eff.missing_block.precision.to_dense(),
                           block.precision.to_dense(), atol=1e-12)

    def test_joint_block_layout(self):
        design = np.column_stack([np.ones(5), np.arange(5.0)])
        values = np.array([10.0, np.nan, 30.0, np.nan, 50.0])
        cov = CovariateWithGaps(values)
        eff = build_linreg_effect(cov, LinRegImputationSpec(design, [1.0, 2.0], 0.5))
        assert eff.n_mis == 2
        assert np.array_equal(eff.order, [1, 3, 0, 2, 4])
        dense = eff.joint.precision.to_dense()
        # cross blocks exactly zero, observed block exactly pinned
        assert np.all(dense[:2, 2:] == 0.0)
        assert np.allclose(np.diag(dense)[2:], 1e10)
        assert np.allclose(eff.joint.mean[2:], [10.0, 30.0, 50.0])
        # permutation round trip
        v = np.arange(5.0)
        assert np.allclose(eff.to_data_order(eff.to_block_order(v)), v)

    def test_sampled_observed_entries_stay_pinned(self):
        rng = np.random.default_rng(22)
        design = np.column_stack([np.ones(6), rng.standard_normal(6)])
        values = rng.standard_normal(6) * 5
        values[[0, 4]] = np.nan
        cov = CovariateWithGaps(values)
        eff = build_linreg_effect(cov, LinRegImputationSpec(design, [0.0, 1.0], 1.0))
        draw = eff.to_data_order(sample(eff.joint, rng))
        obs = cov.partition.obs
        assert np.max(np.abs(draw[obs] - values[obs])) < 10.0 / np.sqrt(1e10)


class TestCarEffect:
    def test_rho_near_zero_reduces_to_independent(self):
        w = scale_adjacency(path_graph(4))
        values = np.array([1.0, np.nan, 2.0, np.nan])
        cov = CovariateWithGaps(values)
        eff = build_car_effect(cov, CarImputationSpec(w, alpha=0.8, tau=2.0, rho=1e-8))
        assert np.allclose(eff.missing_block.mean, [0.8, 0.8], atol=1e-6)
        assert np.allclose(eff.missing_block.precision.to_dense(),
                           2.0 * np.eye(2), atol=1e-6)

    def test_path_graph_against_dense_oracle(self):
        w = scale_adjacency(path_graph(3))
        values = np.array([2.0, np.nan, 4.0])
        cov = CovariateWithGaps(values)
        spec = CarImputationSpec(w, alpha=0.0, tau=1.0, rho=0.5)
        eff = build_car_effect(cov, spec)
        q_dense = car_precision_dense(w, 1.0, 0.5)
        cov_dense = np.linalg.inv(q_dense)
        mis, obs = [1], [0, 2]
        mean_o = cov_dense[np.ix_(mis, obs)] @ np.linalg.solve(
            cov_dense[np.ix_(obs, obs)], values[obs])
        assert np.allclose(eff.missing_block.mean, mean_o, atol=1e-10)
        prec_o = q_dense[np.ix_(mis, mis)]
        assert np.allclose(eff.missing_block.precision.to_dense(), prec_o)

    def test_half_missing_lattice_structure(self):
        # 100-node lattice, 50 missing: conditional block factorizes and has
        # the right dimension
        n = 10
        edges = []
        for i in range(n):
            for j in range(n):
                k = i * n + j
                if i + 1 < n:
                    edges.append((k, k + n))
                if j + 1 < n:
                    edges.append((k, k + 1))
        w = scale_adjacency(SparsePrecision(
            100, [e[0] for e in edges], [e[1] for e in edges], np.ones(len(edges))))
        rng = np.random.default_rng(23)
        values = rng.standard_normal(100)
        values[rng.choice(100, size=50, replace=False)] = np.nan
        cov = CovariateWithGaps(values)
        eff = build_car_effect(cov, CarImputationSpec(w, 0.1, 1.5, 0.9))
        assert eff.missing_block.precision.dim == 50
        factorize(eff.missing_block.precision)  # must not raise

    def test_agrees_with_intercept_only_linreg_at_tiny_rho(self):
        w = scale_adjacency(path_graph(5))
        values = np.array([1.0, np.nan, 3.0, np.nan, 0.5])
        cov = CovariateWithGaps(values)
        alpha, tau = -0.4, 1.7
        car = build_car_effect(cov, CarImputationSpec(w, alpha, tau, rho=1e-9))
        lin = build_linreg_effect(
            cov, LinRegImputationSpec(np.ones((5, 1)), [alpha], tau))
        assert np.allclose(car.missing_block.mean, lin.missing_block.mean, atol=1e-7)

    def test_unscaled_adjacency_rejected(self):
        w = SparsePrecision(3, [0, 0, 1], [1, 2, 2], [1.0, 1.0, 1.0])  # radius 2
        with pytest.raises(DimensionMismatch):
            CarImputationSpec(w, 0.0, 1.0, 0.5)

    def test_rho_bounds_enforced(self):
        w = scale_adjacency(path_graph(3))
        for bad in (0.0, 1.0, -0.2, 1.4):
            with pytest.raises(DimensionMismatch):
                CarImputationSpec(w, 0.0, 1.0, bad)


class TestInformativePrior:
    def test_linreg_no_missing_matches_univariate_sum(self):
        rng = np.random.default_rng(24)
        design = np.column_stack([np.ones(8), rng.standard_normal(8)])
        beta = np.array([0.5, -1.0])
        tau = 1.3
        values = design @ beta + rng.standard_normal(8) / np.sqrt(tau)
        cov = CovariateWithGaps(values)
        got = informative_prior_logdensity(cov, LinRegImputationSpec(design, beta, tau))
        data_term = scipy.stats.norm(design @ beta, 1.0 / np.sqrt(tau)).logpdf(values).sum()
        prior_term = (log_normal_prior(0.5) + log_normal_prior(-1.0)
                      + log_gamma_tau_prior(np.log(tau)))
        assert got == pytest.approx(data_term + prior_term, abs=1e-10)

    def test_car_two_of_four_missing_matches_schur_marginal(self):
        w = scale_adjacency(path_graph(4))
        values = np.array([1.0, np.nan, np.nan, -2.0])
        cov = CovariateWithGaps(values)
        alpha, tau, rho = 0.3, 2.0, 0.7
        got = informative_prior_logdensity(cov, CarImputationSpec(w, alpha, tau, rho))
        q = car_precision_dense(w, tau, rho)
        cov_dense = np.linalg.inv(q)
        obs = [0, 3]
        data_term = scipy.stats.multivariate_normal(
            np.full(2, alpha), cov_dense[np.ix_(obs, obs)]).logpdf(values[obs])
        prior_term = (log_gamma_tau_prior(np.log(tau))
                      + log_logit_rho_prior(float(logit(rho)))
                      + log_normal_prior(alpha))
        assert got == pytest.approx(data_term + prior_term, abs=1e-8)

    def test_empty_covariate_recovers_pure_prior(self):
        cov = CovariateWithGaps(np.zeros(0))
        design = np.zeros((0, 2))
        for log_tau in (-2.0, 0.0, 3.0):
            got = informative_prior_logdensity(
                cov, LinRegImputationSpec(design, [0.2, -0.1], np.exp(log_tau)))
            want = (log_normal_prior(0.2) + log_normal_prior(-0.1)
                    + log_gamma_tau_prior(log_tau))
            assert got == pytest.approx(want, abs=1e-12)


class TestEffectInvariants:
    def test_builders_are_deterministic(self):
        rng = np.random.default_rng(25)
        design = np.column_stack([np.ones(6), rng.standard_normal(6)])
        values = rng.standard_normal(6)
        values[[2, 5]] = np.nan
        cov = CovariateWithGaps(values)
        spec = LinRegImputationSpec(design, [0.1, 0.2], 0.9)
        a = build_linreg_effect(cov, spec)
        b = build_linreg_effect(cov, spec)
        assert np.array_equal(a.joint.mean, b.joint.mean)
        assert np.array_equal(a.joint.precision.vals, b.joint.precision.vals)

    def test_joint_density_splits_over_blocks(self):
        # the joint factorizes into pinned and conditional parts exactly
        rng = np.random.default_rng(26)
        w = scale_adjacency(path_graph(6))
        values = rng.standard_normal(6)
        values[[1, 4]] = np.nan
        cov = CovariateWithGaps(values)
        eff = build_car_effect(cov, CarImputationSpec(w, 0.2, 1.1, 0.6))
        x_block = rng.standard_normal(6) * 0.1 + eff.joint.mean
        lhs = gmrf_logdensity(x_block, eff.joint.mean, eff.joint.precision)
        pinned_part = gmrf_logdensity(
            x_block[2:], eff.joint.mean[2:], SparsePrecision.identity(4, 1e10))
        mis_part = gmrf_logdensity(
            x_block[:2], eff.missing_block.mean, eff.missing_block.precision)
        assert lhs == pytest.approx(pinned_part + mis_part, rel=1e-10)
