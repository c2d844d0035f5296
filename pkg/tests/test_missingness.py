"""Mask simulation nesting/weighting and the attached indicator sub-model."""

import numpy as np
import pytest

from gmrfimpute import engine
from gmrfimpute.effects import CovariateWithGaps
from gmrfimpute.errors import (
    DimensionMismatch,
    MissingEffectReference,
    ProportionOutOfRange,
)
from gmrfimpute.missingness import (
    MissingnessScenario,
    MissingnessSubmodel,
    attach_missingness_submodel,
    simulate_mask,
)
from gmrfimpute.model import CopyLink, EffectDecl, ModelSpec
from gmrfimpute.priors import expit, logit


class TestScenario:
    def test_defaults(self):
        s = MissingnessScenario("MNAR", [0.05, 0.5])
        assert s.mnar_slope == 5.0
        assert s.mnar_intercept == 0.0

    def test_proportion_validation(self):
        with pytest.raises(ProportionOutOfRange):
            MissingnessScenario("MCAR", [0.0, 0.5])
        with pytest.raises(ProportionOutOfRange):
            MissingnessScenario("MCAR", [0.5, 0.5])
        with pytest.raises(ProportionOutOfRange):
            MissingnessScenario("MCAR", [])
        with pytest.raises(DimensionMismatch):
            MissingnessScenario("NMAR", [0.5])


class TestSimulateMask:
    def test_sizes_are_ceilings(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=100)
        s = MissingnessScenario("MCAR", [0.01, 0.05, 0.10, 0.15, 0.30, 0.50])
        masks = simulate_mask(x, s, rng)
        assert [int(m.sum()) for m in masks] == [1, 5, 10, 15, 30, 50]

    def test_nested_prefixes(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=73)
        for mech in ("MCAR", "MNAR"):
            s = MissingnessScenario(mech, [0.05, 0.10, 0.15, 0.30, 0.50])
            masks = simulate_mask(x, s, np.random.default_rng(11))
            for a, b in zip(masks, masks[1:]):
                assert np.all(b[a])  # smaller mask contained in larger

    def test_deterministic_under_seed(self):
        x = np.linspace(-2, 2, 40)
        s = MissingnessScenario("MNAR", [0.25])
        m1 = simulate_mask(x, s, np.random.default_rng(7))[0]
        m2 = simulate_mask(x, s, np.random.default_rng(7))[0]
        assert np.array_equal(m1, m2)

    def test_mnar_prefers_large_covariate(self):
        # 10 large-x, 90 small-x units: masked 10% should be mostly large-x.
        # oracle: first pick alone lands on a large unit with probability
        # 10*expit(10)/(10*expit(10)+90*expit(-10)) ~ 1, so the mean fraction
        # over seeds must sit far above the MCAR value of 0.1
        x = np.concatenate([np.full(10, 2.0), np.full(90, -2.0)])
        s = MissingnessScenario("MNAR", [0.10])
        fractions = []
        for seed in range(500):
            m = simulate_mask(x, s, np.random.default_rng(seed))[0]
            fractions.append(np.mean(x[m] > 0))
        assert np.mean(fractions) > 0.5

    def test_mcar_is_uniform(self):
        # every unit equally likely: inclusion frequency of unit 0 near p
        s = MissingnessScenario("MCAR", [0.20])
        x = np.arange(50, dtype=float)
        hits = sum(simulate_mask(x, s, np.random.default_rng(seed))[0][0]
                   for seed in range(1000))
        assert abs(hits / 1000 - 0.20) < 0.04

    def test_mar_simulation_rejected(self):
        s = MissingnessScenario("MAR", [0.1])
        with pytest.raises(ValueError):
            simulate_mask(np.ones(5), s, np.random.default_rng(0))

    def test_requires_fully_observed(self):
        s = MissingnessScenario("MCAR", [0.1])
        with pytest.raises(DimensionMismatch):
            simulate_mask(np.array([1.0, np.nan]), s, np.random.default_rng(0))


def small_joint_model(rng, n=24):
    z = rng.normal(1.0, 1.0, size=n)
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=n // 3, replace=False)] = True
    z_obs = z.copy()
    z_obs[mask] = np.nan
    cov = CovariateWithGaps(z_obs)
    eff = EffectDecl("w", cov, "linreg", design=np.ones((n, 1)),
                     links=(CopyLink(np.arange(n), np.arange(n), "copy"),))
    y = 0.8 * z + rng.normal(size=n) * 0.4
    model = ModelSpec(y, "gaussian", np.ones((n, 1)), fixed_names=["icpt"],
                      effects=(eff,), fixed_gaussian_tau=6.25)
    return model, mask, z


class TestAttach:
    def test_mcar_adds_no_hypers_and_recovers_logit_fraction(self):
        rng = np.random.default_rng(2)
        model, mask, _ = small_joint_model(rng)
        sub = MissingnessSubmodel(mask, effect="w")
        joint = attach_missingness_submodel(model, sub, "MCAR")
        assert joint.hyper_names == model.hyper_names
        assert joint.fixed_names == ["icpt", "miss.alpha"]
        assert joint.n_rows == model.n_rows + mask.size
        pts = engine.explore_hyperparameters(joint)
        marg = engine.latent_marginals(joint, pts)
        # intercept-only Bernoulli with a flat-ish prior: mode near the
        # sample logit; the N(0, 0.001) prior shrinks it slightly
        target = logit(mask.mean())
        assert abs(marg["miss.alpha"].mean - target) < 0.35

    def test_mcar_leaves_analysis_posterior_unchanged(self):
        rng = np.random.default_rng(3)
        model, mask, _ = small_joint_model(rng)
        sub = MissingnessSubmodel(mask, effect="w")
        joint = attach_missingness_submodel(model, sub, "MCAR")
        base_pts = engine.explore_hyperparameters(model)
        base = engine.hyper_summaries(model, base_pts)
        joint_pts = engine.explore_hyperparameters(joint)
        got = engine.hyper_summaries(joint, joint_pts)
        # the indicator block is independent of every analysis parameter
        assert abs(got["w.copy"]["mean"] - base["w.copy"]["mean"]) < 2e-3
        assert abs(got["w.copy"]["sd"] - base["w.copy"]["sd"]) < 2e-3

    def test_mar_appends_design_columns(self):
        rng = np.random.default_rng(4)
        model, mask, _ = small_joint_model(rng)
        groups = rng.integers(0, 2, size=mask.size).astype(float)
        sub = MissingnessSubmodel(mask, effect="w", design=groups[:, None])
        joint = attach_missingness_submodel(model, sub, "MAR")
        assert joint.fixed_names == ["icpt", "miss.alpha", "miss.b1"]
        assert joint.hyper_names == model.hyper_names
        built = joint.build_effects(joint.theta_init())
        a = joint.loading_matrix(joint.theta_init(), built)
        rows = np.arange(model.n_rows, joint.n_rows)
        assert np.array_equal(a[rows, joint.fixed_offset + 2], groups)

    def test_mar_without_design_rejected(self):
        rng = np.random.default_rng(5)
        model, mask, _ = small_joint_model(rng)
        sub = MissingnessSubmodel(mask, effect="w")
        with pytest.raises(DimensionMismatch):
            attach_missingness_submodel(model, sub, "MAR")

    def test_mnar_adds_delta_and_wires_latents(self):
        rng = np.random.default_rng(6)
        model, mask, _ = small_joint_model(rng)
        sub = MissingnessSubmodel(mask, effect="w")
        joint = attach_missingness_submodel(model, sub, "MNAR")
        assert joint.hyper_names == model.hyper_names + ["mnar.delta"]
        theta = joint.theta_init()
        theta[joint.delta_index] = 1.5
        built = joint.build_effects(theta)
        a = joint.loading_matrix(theta, built)
        rows = np.arange(model.n_rows, joint.n_rows)
        pos = built[0].position_of
        for i in (0, 5, 11):
            assert a[rows[i], pos[i]] == 1.5

    def test_unknown_effect_name(self):
        rng = np.random.default_rng(7)
        model, mask, _ = small_joint_model(rng)
        sub = MissingnessSubmodel(mask, effect="nope")
        with pytest.raises(MissingEffectReference):
            attach_missingness_submodel(model, sub, "MNAR")

    def test_indicator_must_match_missing_entries(self):
        rng = np.random.default_rng(8)
        model, mask, _ = small_joint_model(rng)
        wrong = mask.copy()
        wrong[np.argmin(wrong)] = True  # flip one observed unit to "missing"
        sub = MissingnessSubmodel(wrong, effect="w")
        with pytest.raises(DimensionMismatch):
            attach_missingness_submodel(model, sub, "MCAR")

    def test_delta_recovered_when_selection_is_strong(self):
        # strong MNAR selection on a well-identified covariate: the delta
        # posterior should be clearly positive
        rng = np.random.default_rng(9)
        n = 60
        z = rng.normal(0.0, 1.0, size=n)
        s = MissingnessScenario("MNAR", [0.4], mnar_slope=5.0)
        mask = simulate_mask(z, s, rng)[0]
        z_obs = z.copy()
        z_obs[mask] = np.nan
        cov = CovariateWithGaps(z_obs)
        eff = EffectDecl("w", cov, "linreg", design=np.ones((n, 1)),
                         links=(CopyLink(np.arange(n), np.arange(n), "copy"),))
        y = 0.8 * z + rng.normal(size=n) * 0.3
        model = ModelSpec(y, "gaussian", np.ones((n, 1)), fixed_names=["icpt"],
                          effects=(eff,), fixed_gaussian_tau=1.0 / 0.09)
        joint = attach_missingness_submodel(
            model, MissingnessSubmodel(mask, effect="w"), "MNAR")
        pts = engine.explore_hyperparameters(joint)
        hs = engine.hyper_summaries(joint, pts)
        assert hs["mnar.delta"]["mean"] > 0.0
