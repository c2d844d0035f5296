"""County-lattice simulation design for the bundled SIDS-style study.

One replicate is a square rook lattice of counties carrying a spatially
correlated covariate and Poisson disease counts:

  * a latent CAR field on the lattice drives the share of non-white
    births per county;
  * birth totals and expected counts are log-normal draws, rounded to
    plausible integer scales;
  * the analysis covariate is the logit of the realised non-white share,
    standardized across counties;
  * observed counts are Poisson with a log link, an expected-count
    offset, and a linear predictor built from that same covariate.

The response is generated from the post-rounding covariate, so fitting
the generating Poisson model to a complete replicate targets the stated
intercept and slope exactly, up to sampling noise. Masks for the
missingness study come from missingness.simulate_mask on the covariate.
"""

from __future__ import annotations

import numpy as np

from .effects import CarImputationSpec
from .errors import DimensionMismatch
from .gmrf import GaussianBlock, SparsePrecision, sample, scale_adjacency
from .priors import expit

# Latent-field shaping: the non-white share is expit(a + b * z) with z the
# standardized CAR draw, giving shares spread over roughly (0.08, 0.5).
SHARE_INTERCEPT = -1.2
SHARE_SLOPE = 0.8

COVARIATE_TRANSFORMS = ("logit-std", "logit", "proportion")


def rook_adjacency(side: int) -> SparsePrecision:
    """0/1 rook-neighbour adjacency of a side x side lattice, unscaled."""
    side = int(side)
    if side < 2:
        raise DimensionMismatch("lattice side must be at least 2")
    rows, cols = [], []
    for r in range(side):
        for c in range(side):
            i = r * side + c
            if c + 1 < side:
                rows.append(i)
                cols.append(i + 1)
            if r + 1 < side:
                rows.append(i)
                cols.append(i + side)
    return SparsePrecision(side * side, np.asarray(rows, dtype=np.int64),
                           np.asarray(cols, dtype=np.int64),
                           np.ones(len(rows)))


def _count_pair(nonwhite, births):
    nw = np.asarray(nonwhite, dtype=np.float64).ravel()
    n = np.asarray(births, dtype=np.float64).ravel()
    if nw.shape != n.shape:
        raise DimensionMismatch("nonwhite and births must share a length")
    if nw.size < 2:
        raise DimensionMismatch("need at least two counties")
    if np.any(n <= 1) or np.any(nw <= 0) or np.any(nw >= n):
        raise DimensionMismatch("counts must satisfy 0 < nonwhite < births")
    return nw, n


def logit_standardize(nonwhite, births) -> np.ndarray:
    """logit(nonwhite / births), standardized to mean 0 and unit variance."""
    nw, n = _count_pair(nonwhite, births)
    raw = np.log(nw) - np.log(n - nw)
    sd = float(raw.std(ddof=1))
    if sd == 0.0:
        raise DimensionMismatch("constant shares cannot be standardized")
    return (raw - raw.mean()) / sd


def covariate_transform(nonwhite, births, kind: str = "logit-std") -> np.ndarray:
    """The analysis covariate under each supported transform choice."""
    if kind not in COVARIATE_TRANSFORMS:
        raise DimensionMismatch(f"unknown covariate transform {kind!r}")
    if kind == "logit-std":
        return logit_standardize(nonwhite, births)
    nw, n = _count_pair(nonwhite, births)
    if kind == "logit":
        return np.log(nw) - np.log(n - nw)
    return nw / n


class SidsReplicate:
    """One simulated lattice of counties plus its generating pieces."""

    __slots__ = ("side", "latent", "births", "nonwhite", "expected",
                 "observed", "covariate", "adjacency")

    def __init__(self, side, latent, births, nonwhite, expected, observed,
                 covariate, adjacency):
        self.side = int(side)
        self.latent = latent
        self.births = births
        self.nonwhite = nonwhite
        self.expected = expected
        self.observed = observed
        self.covariate = covariate
        self.adjacency = adjacency

    @property
    def n(self) -> int:
        return self.side * self.side

    def to_columns(self) -> dict:
        """Column dict in the bundled CSV's layout."""
        return {
            "county": np.arange(self.n),
            "observed": self.observed,
            "expected": self.expected,
            "nonwhite": self.nonwhite,
            "births": self.births,
        }


def simulate_replicate(seed, side: int = 10, mean_expected: float = 5.0,
                       intercept: float = -0.141, slope: float = 0.524,
                       car_tau: float = 2.0, car_rho: float = 0.975,
                       birth_scale: float = 2000.0) -> SidsReplicate:
    """Draw one replicate of the lattice design.

    The draw order is fixed (field, births, non-white counts, expected
    counts, observed counts), so a seeded generator reproduces the
    replicate exactly.
    """
    rng = np.random.default_rng(seed)
    adjacency = rook_adjacency(side)
    n = side * side
    field_prec = CarImputationSpec(scale_adjacency(adjacency), alpha=0.0,
                                   tau=car_tau, rho=car_rho).full_precision()
    latent = sample(GaussianBlock(np.zeros(n), field_prec), rng)

    births = np.exp(rng.normal(np.log(birth_scale), 0.5, size=n))
    births = np.clip(np.round(births), 2.0, None).astype(np.int64)

    z = (latent - latent.mean()) / latent.std(ddof=1)
    share = expit(SHARE_INTERCEPT + SHARE_SLOPE * z)
    nonwhite = np.round(births * share)
    nonwhite = np.clip(nonwhite, 1.0, births - 1.0).astype(np.int64)
    covariate = logit_standardize(nonwhite, births)

    expected = np.exp(rng.normal(np.log(mean_expected), 0.8, size=n))
    expected = np.maximum(np.round(expected), 1.0)

    rate = expected * np.exp(intercept + slope * covariate)
    observed = rng.poisson(rate).astype(np.int64)
    return SidsReplicate(side, latent, births, nonwhite, expected, observed,
                         covariate, adjacency)
