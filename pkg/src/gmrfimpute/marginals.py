"""Gridded univariate posterior marginals and their summaries.

Marginals produced by the engine are mixtures of Gaussians (one component
per hyperparameter grid point); mean and sd of those come from exact
mixture moments, while quantiles are read off the gridded CDF. Marginals
re-built from a bare grid (pooling, file round-trips) compute everything
by trapezoid integration instead.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from .errors import DimensionMismatch, EmptyInput

GRID_POINTS = 75
GRID_SPAN = 5.0
QUANTILE_LEVELS = (0.025, 0.5, 0.975)


class PosteriorMarginal:
    """A univariate density on a grid plus summary statistics."""

    __slots__ = ("grid", "density", "mean", "sd", "quantiles")

    def __init__(self, grid, density, mean, sd, quantiles):
        grid = np.asarray(grid, dtype=np.float64)
        density = np.asarray(density, dtype=np.float64)
        if grid.shape != density.shape or grid.ndim != 1:
            raise DimensionMismatch("grid and density must be equal-length vectors")
        grid.setflags(write=False)
        density.setflags(write=False)
        self.grid = grid
        self.density = density
        self.mean = float(mean)
        self.sd = float(sd)
        self.quantiles = dict(quantiles)

    @classmethod
    def from_mixture(cls, means, variances, weights, n_grid=GRID_POINTS,
                     span=GRID_SPAN) -> "PosteriorMarginal":
        """Weighted Gaussian mixture; moments are exact, not gridded."""
        means = np.asarray(means, dtype=np.float64)
        variances = np.asarray(variances, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if not means.size:
            raise EmptyInput("mixture needs at least one component")
        sds = np.sqrt(variances)
        lo = float(np.min(means - span * sds))
        hi = float(np.max(means + span * sds))
        if hi <= lo:
            hi = lo + 1e-12
        x = np.linspace(lo, hi, n_grid)
        zs = (x[None, :] - means[:, None]) / sds[:, None]
        density = (weights[:, None] / (np.sqrt(2 * np.pi) * sds[:, None])
                   * np.exp(-0.5 * zs ** 2)).sum(axis=0)
        cdf = (weights[:, None] * ndtr(zs)).sum(axis=0)
        mean = float(weights @ means)
        var = float(weights @ (variances + means ** 2)) - mean ** 2
        quantiles = {q: float(np.interp(q, cdf, x)) for q in QUANTILE_LEVELS}
        return cls(x, density, mean, np.sqrt(max(var, 0.0)), quantiles)

    @classmethod
    def from_grid(cls, x, density) -> "PosteriorMarginal":
        """Summaries recomputed by trapezoid integration of a raw grid."""
        x = np.asarray(x, dtype=np.float64)
        density = np.asarray(density, dtype=np.float64)
        mass = float(np.trapezoid(density, x))
        if mass <= 0:
            raise DimensionMismatch("density must have positive mass")
        mean = float(np.trapezoid(x * density, x)) / mass
        var = float(np.trapezoid(x * x * density, x)) / mass - mean ** 2
        mids = 0.5 * (density[1:] + density[:-1]) * np.diff(x)
        cdf = np.concatenate([[0.0], np.cumsum(mids)]) / mass
        quantiles = {q: float(np.interp(q, cdf, x)) for q in QUANTILE_LEVELS}
        return cls(x, density / mass, mean, np.sqrt(max(var, 0.0)), quantiles)

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


def common_grid(marginals, n_grid: int) -> np.ndarray:
    """Shared abscissa spanning the union of the inputs' supports."""
    if not marginals:
        raise EmptyInput("no marginals to align")
    lo = min(float(m.grid[0]) for m in marginals)
    hi = max(float(m.grid[-1]) for m in marginals)
    return np.linspace(lo, hi, n_grid)


def regrid(marginal: PosteriorMarginal, x: np.ndarray) -> np.ndarray:
    """Linear interpolation of the density onto x, zero outside support."""
    return np.interp(x, marginal.grid, marginal.density, left=0.0, right=0.0)


def weighted_atom_summary(values, weights) -> dict:
    """Mean/sd/quantiles of a weighted point mass distribution."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    mean = float(w @ v)
    var = float(w @ (v - mean) ** 2)
    # Hazen-style plotting positions for the weighted empirical quantiles
    positions = np.cumsum(w) - 0.5 * w
    out = {"mean": mean, "sd": float(np.sqrt(max(var, 0.0)))}
    for q in QUANTILE_LEVELS:
        out[f"q{100 * q:g}"] = float(np.interp(q, positions, v))
    return out
