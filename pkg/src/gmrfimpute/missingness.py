"""Nested missingness masks and the Bernoulli missing-indicator sub-model.

Simulation draws one ordering per mechanism and takes prefixes, so the
masks for an ascending proportion ladder are nested by construction. The
MNAR ordering is a weighted random permutation (successive sampling with
inclusion weight expit(intercept + slope * x)), which marginally matches
a Bernoulli-logit missingness model conditioned on the mask size.

attach_missingness_submodel extends a fitted analysis model with one
Bernoulli row per unit for the missing indicator: intercept only (MCAR),
intercept plus fully observed covariates (MAR), or intercept plus the
imputed covariate's latent value through the shared delta coefficient
(MNAR), which is what feeds information about the missingness process
back into the imputation.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    DimensionMismatch,
    MissingEffectReference,
    ProportionOutOfRange,
)
from .model import CopyLink, EffectDecl, ModelSpec
from .priors import expit

MCAR, MAR, MNAR = "MCAR", "MAR", "MNAR"
MECHANISMS = (MCAR, MAR, MNAR)


class MissingnessScenario:
    """Mechanism, proportion ladder, and the MNAR selection logit."""

    __slots__ = ("mechanism", "proportions", "mnar_slope", "mnar_intercept")

    def __init__(self, mechanism, proportions, mnar_slope=5.0,
                 mnar_intercept=0.0):
        if mechanism not in MECHANISMS:
            raise DimensionMismatch(f"unknown mechanism {mechanism!r}")
        props = tuple(float(p) for p in proportions)
        if not props:
            raise ProportionOutOfRange("need at least one proportion")
        for p in props:
            if not 0.0 < p < 1.0:
                raise ProportionOutOfRange(f"proportion {p} outside (0, 1)")
        if any(b <= a for a, b in zip(props, props[1:])):
            raise ProportionOutOfRange("proportions must be strictly ascending")
        self.mechanism = mechanism
        self.proportions = props
        self.mnar_slope = float(mnar_slope)
        self.mnar_intercept = float(mnar_intercept)


def simulate_mask(covariate, scenario: MissingnessScenario, rng) -> list:
    """One boolean mask per proportion, nested along the ladder."""
    x = np.asarray(covariate, dtype=np.float64).ravel()
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise DimensionMismatch("simulation needs a fully observed covariate")
    if scenario.mechanism == MAR:
        raise ValueError("MAR mask simulation is not supported; "
                         "MAR remains available as a model variant")
    n = x.size
    if scenario.mechanism == MCAR:
        order = rng.permutation(n)
    else:
        # exponential race: argsort of E_i / w_i is a successive-sampling
        # permutation with single-draw probabilities proportional to w_i
        w = expit(scenario.mnar_intercept + scenario.mnar_slope * x)
        order = np.argsort(rng.exponential(size=n) / w)
    masks = []
    for p in scenario.proportions:
        k = math.ceil(p * n)
        mask = np.zeros(n, dtype=bool)
        mask[order[:k]] = True
        masks.append(mask)
    return masks


class MissingnessSubmodel:
    """Missing indicator of one imputation effect plus optional MAR columns."""

    __slots__ = ("indicator", "design", "design_names", "effect")

    def __init__(self, indicator, effect: str, design=None, design_names=None):
        indicator = np.asarray(indicator).astype(np.float64)
        if not np.all(np.isin(indicator, (0.0, 1.0))):
            raise DimensionMismatch("indicator entries must be 0/1")
        if design is not None:
            design = np.asarray(design, dtype=np.float64)
            if design.ndim != 2 or design.shape[0] != indicator.size:
                raise DimensionMismatch("design rows must match the indicator")
            if not np.all(np.isfinite(design)):
                raise DimensionMismatch("design columns must be fully observed")
            if design_names is None:
                design_names = [f"miss.b{j + 1}" for j in range(design.shape[1])]
            if len(design_names) != design.shape[1]:
                raise DimensionMismatch("design_names length must match columns")
            design_names = list(design_names)
        self.indicator = indicator
        self.design = design
        self.design_names = design_names
        self.effect = str(effect)


def attach_missingness_submodel(model: ModelSpec, submodel: MissingnessSubmodel,
                                variant: str) -> ModelSpec:
    """New ModelSpec with the indicator's Bernoulli rows appended."""
    if variant not in MECHANISMS:
        raise DimensionMismatch(f"unknown variant {variant!r}")
    target = None
    for eff in model.effects:
        if eff.name == submodel.effect:
            target = eff
    if target is None:
        raise MissingEffectReference(
            f"model has no imputation effect named {submodel.effect!r}")
    n_ind = submodel.indicator.size
    if n_ind != target.cov.n:
        raise DimensionMismatch("indicator length must match the covariate")
    is_missing = np.zeros(target.cov.n, dtype=bool)
    is_missing[target.cov.partition.mis] = True
    if not np.array_equal(submodel.indicator == 1.0, is_missing):
        raise DimensionMismatch(
            "indicator must be 1 exactly at the covariate's missing entries")

    n_old = model.n_rows
    responses = np.concatenate([model.responses, submodel.indicator])
    families = list(model.families) + [2] * n_ind
    offsets = np.concatenate([model.offsets, np.zeros(n_ind)])

    miss_cols = [np.ones((n_ind, 1))]
    miss_names = ["miss.alpha"]
    if variant == MAR:
        if submodel.design is None:
            raise DimensionMismatch("MAR variant needs observed design columns")
        miss_cols.append(submodel.design)
        miss_names.extend(submodel.design_names)
    miss_design = np.hstack(miss_cols)
    p_old = model.n_fixed
    fixed = np.zeros((n_old + n_ind, p_old + miss_design.shape[1]))
    fixed[:n_old, :p_old] = model.fixed_design
    fixed[n_old:, p_old:] = miss_design

    effects = []
    for eff in model.effects:
        links = eff.links
        if variant == MNAR and eff.name == submodel.effect:
            links = links + (CopyLink(n_old + np.arange(n_ind),
                                      np.arange(n_ind), "delta"),)
        effects.append(EffectDecl(eff.name, eff.cov, eff.kind,
                                  design=eff.design, adjacency=eff.adjacency,
                                  links=links, has_copy=eff.has_copy))

    return ModelSpec(responses, families, fixed,
                     fixed_names=model.fixed_names + miss_names,
                     offsets=offsets, effects=tuple(effects),
                     fixed_gaussian_tau=model.fixed_gaussian_tau,
                     pinning_precision=model.pinning_precision,
                     fixed_prior_precision=model.fixed_prior_precision)
