"""Multiple imputation of categorical covariates with model averaging.

A partially observed label vector gets an imputation model for the level
probabilities within each stratum of fully observed discrete predictors.
The multinomial likelihood is fit as a saturated Poisson log-linear model
on the stratum-by-level contingency table; fitted rates normalized within
a stratum give the probability table. Completed label vectors sampled
from the table each get their own analysis fit, and the per-completion
marginals are averaged with equal weights on a shared abscissa. The two
stages do not feed back into each other.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import engine
from .errors import (
    AllMissingCovariate,
    DegenerateTable,
    DimensionMismatch,
    EmptyInput,
)
from .marginals import (
    QUANTILE_LEVELS,
    PosteriorMarginal,
    common_grid,
    regrid,
    weighted_atom_summary,
)
from .model import ModelSpec

POOL_GRID_POINTS = 151
DEFAULT_DRAWS = 100


class CategoricalWithGaps:
    """Partially observed labels plus fully observed discrete predictors.

    Missing labels are None. Strata are the distinct predictor rows in
    first-appearance order; every unit belongs to a stratum whether or
    not its label is observed.
    """

    def __init__(self, levels, values, groups):
        levels = tuple(levels)
        if len(levels) < 2:
            raise DimensionMismatch("need at least two levels")
        if len(set(levels)) != len(levels):
            raise DimensionMismatch("levels must be distinct")
        values = list(values)
        n = len(values)
        groups = np.asarray(groups, dtype=object)
        if groups.ndim == 1:
            groups = groups[:, None]
        if groups.ndim != 2 or groups.shape[0] != n:
            raise DimensionMismatch("one grouping row per unit required")
        for i in range(n):
            for g in groups[i]:
                if g is None or (isinstance(g, float) and np.isnan(g)):
                    raise DimensionMismatch(
                        "grouping covariates must be fully observed")
        observed = np.zeros(n, dtype=bool)
        for i, v in enumerate(values):
            if v is None:
                continue
            if v not in levels:
                raise DimensionMismatch(f"value {v!r} not among levels")
            observed[i] = True
        self.levels = levels
        self.values = tuple(values)
        self.groups = tuple(tuple(row) for row in groups)
        self.observed = observed
        self.n = n

    @property
    def n_mis(self) -> int:
        return int(np.sum(~self.observed))


class ProbabilityTable:
    """Per-stratum level probabilities and the unit-to-stratum map."""

    __slots__ = ("strata", "levels", "probs", "unit_strata", "degenerate_strata")

    def __init__(self, strata, levels, probs, unit_strata, degenerate_strata):
        self.strata = tuple(strata)
        self.levels = tuple(levels)
        self.probs = np.asarray(probs, dtype=np.float64)
        self.unit_strata = np.asarray(unit_strata, dtype=np.int64)
        self.degenerate_strata = tuple(degenerate_strata)

    def row(self, stratum) -> np.ndarray:
        return self.probs[self.strata.index(stratum)]


class ImputationDraws:
    """Completed label vectors; observed positions are untouched."""

    __slots__ = ("L", "draws", "seed")

    def __init__(self, L, draws, seed):
        self.L = int(L)
        self.draws = tuple(draws)
        self.seed = seed


class PooledMarginal:
    """Per-completion marginals plus their equal-weight average."""

    __slots__ = ("per_draw", "pooled")

    def __init__(self, per_draw, pooled):
        self.per_draw = tuple(per_draw)
        self.pooled = pooled


def _saturated_design(n_strata: int, levels) -> tuple[np.ndarray, list]:
    """Intercept, stratum and level main effects, and their interaction."""
    n_lev = len(levels)
    cells = n_strata * n_lev
    cols, names = [np.ones(cells)], ["icpt"]
    g_idx = np.repeat(np.arange(n_strata), n_lev)
    k_idx = np.tile(np.arange(n_lev), n_strata)
    for g in range(1, n_strata):
        cols.append((g_idx == g).astype(float))
        names.append(f"stratum{g}")
    for k in range(1, n_lev):
        cols.append((k_idx == k).astype(float))
        names.append(f"level.{levels[k]}")
    for g in range(1, n_strata):
        for k in range(1, n_lev):
            cols.append(((g_idx == g) & (k_idx == k)).astype(float))
            names.append(f"stratum{g}:level.{levels[k]}")
    return np.column_stack(cols), names


def fit_multinomial_poisson(cat: CategoricalWithGaps, include_outcome=False,
                            outcome=None) -> ProbabilityTable:
    """Stratum-level probability table from the observed contingency counts.

    Strata with no observed unit fall back to the marginal level
    frequencies; they are listed in degenerate_strata and flagged with a
    DegenerateTable warning.
    """
    if include_outcome:
        if outcome is None:
            raise DimensionMismatch("include_outcome requires an outcome vector")
        outcome = list(outcome)
        if len(outcome) != cat.n:
            raise DimensionMismatch("outcome length must match the covariate")
        keys = [cat.groups[i] + (outcome[i],) for i in range(cat.n)]
    else:
        keys = list(cat.groups)
    strata = []
    index = {}
    for key in keys:
        if key not in index:
            index[key] = len(strata)
            strata.append(key)
    unit_strata = np.array([index[k] for k in keys], dtype=np.int64)

    n_lev = len(cat.levels)
    level_pos = {lev: k for k, lev in enumerate(cat.levels)}
    counts = np.zeros((len(strata), n_lev))
    for i in range(cat.n):
        if cat.observed[i]:
            counts[unit_strata[i], level_pos[cat.values[i]]] += 1.0
    stratum_totals = counts.sum(axis=1)
    if not np.any(stratum_totals > 0):
        raise AllMissingCovariate("no fully observed unit to estimate from")

    fit_rows = np.where(stratum_totals > 0)[0]
    design, names = _saturated_design(fit_rows.size, cat.levels)
    model = ModelSpec(counts[fit_rows].ravel(), "poisson", design,
                      fixed_names=names)
    points = engine.explore_hyperparameters(model)
    eta = engine.linear_predictor_marginals(
        model, points, rows=np.arange(fit_rows.size * n_lev))
    rates = np.array([eta[r].mean for r in range(fit_rows.size * n_lev)])
    rates = np.exp(rates.reshape(fit_rows.size, n_lev))

    probs = np.empty_like(counts)
    probs[fit_rows] = rates / rates.sum(axis=1, keepdims=True)
    degenerate = [strata[g] for g in np.where(stratum_totals == 0)[0]]
    if degenerate:
        marginal = counts.sum(axis=0) / counts.sum()
        probs[stratum_totals == 0] = marginal
        warnings.warn(f"strata without observed units borrow marginal "
                      f"frequencies: {degenerate}", DegenerateTable)
    return ProbabilityTable(strata, cat.levels, probs, unit_strata, degenerate)


def draw_completions(table: ProbabilityTable, cat: CategoricalWithGaps,
                     L: int = DEFAULT_DRAWS, rng=None) -> ImputationDraws:
    """L completed label vectors, missing entries sampled per stratum."""
    if L < 1:
        raise DimensionMismatch("need at least one completion")
    if table.unit_strata.size != cat.n:
        raise DimensionMismatch("table was fit on a different covariate")
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        gen = np.random.default_rng(seed)
    else:
        seed = None
        gen = rng if rng is not None else np.random.default_rng()
    missing = np.where(~cat.observed)[0]
    draws = []
    for _ in range(L):
        labels = list(cat.values)
        for i in missing:
            k = gen.choice(len(table.levels), p=table.probs[table.unit_strata[i]])
            labels[i] = table.levels[int(k)]
        draws.append(tuple(labels))
    return ImputationDraws(L, draws, seed)


def _pool_one(ms) -> PosteriorMarginal:
    grid = common_grid(ms, POOL_GRID_POINTS)
    density = np.mean(np.stack([regrid(m, grid) for m in ms]), axis=0)
    mass = float(np.trapezoid(density, grid))
    if mass <= 0:
        raise DimensionMismatch("pooled density must have positive mass")
    density = density / mass
    # mean and sd are exact mixture moments; quantiles come from the grid
    means = np.array([m.mean for m in ms])
    variances = np.array([m.sd ** 2 for m in ms])
    mean = float(np.mean(means))
    var = float(np.mean(variances) + np.mean((means - mean) ** 2))
    mids = 0.5 * (density[1:] + density[:-1]) * np.diff(grid)
    cdf = np.concatenate([[0.0], np.cumsum(mids)])
    quantiles = {q: float(np.interp(q, cdf, grid)) for q in QUANTILE_LEVELS}
    return PosteriorMarginal(grid, density, mean, np.sqrt(max(var, 0.0)),
                             quantiles)


def pool_marginals(per_draw) -> dict:
    """Equal-weight average of per-completion marginals per name.

    Densities are aligned by linear interpolation onto a shared abscissa
    spanning the union of supports and normalized after averaging.
    """
    per_draw = list(per_draw)
    if not per_draw:
        raise EmptyInput("no marginal maps to pool")
    names = set(per_draw[0])
    for mp in per_draw[1:]:
        if set(mp) != names:
            raise DimensionMismatch("marginal maps must share names")
    return {name: PooledMarginal([mp[name] for mp in per_draw],
                                 _pool_one([mp[name] for mp in per_draw]))
            for name in per_draw[0]}


class PooledAnalysis:
    """Everything the two-stage pipeline produced."""

    __slots__ = ("table", "draws", "latent", "hyper")

    def __init__(self, table, draws, latent, hyper):
        self.table = table
        self.draws = draws
        self.latent = latent
        self.hyper = hyper


def _pool_hyper_atoms(per_draw_atoms) -> dict:
    """Mixture summaries over completions from the per-fit grid atoms."""
    L = len(per_draw_atoms)
    out = {}
    for name in per_draw_atoms[0]:
        vals = np.concatenate([atoms[name][0] for atoms in per_draw_atoms])
        weights = np.concatenate([atoms[name][1] / L for atoms in per_draw_atoms])
        out[name] = weighted_atom_summary(vals, weights)
    return out


def multiple_imputation_fit(cat: CategoricalWithGaps, build_model,
                            L: int = DEFAULT_DRAWS, rng=None, workers: int = 1,
                            include_outcome=False, outcome=None,
                            n_per_dim: int = 5) -> PooledAnalysis:
    """Fit the imputation table, refit the analysis per completion, pool.

    build_model maps a completed label vector to the analysis ModelSpec.
    With nothing missing the pipeline collapses to one fit whose marginals
    are returned unchanged. Per-completion fits run on a thread map, each
    exploring n_per_dim grid points per hyperparameter dimension.
    """
    table = fit_multinomial_poisson(cat, include_outcome, outcome)
    if cat.n_mis == 0:
        draws = ImputationDraws(1, (tuple(cat.values),), None)
    else:
        draws = draw_completions(table, cat, L, rng)

    def fit_one(labels):
        model = build_model(np.asarray(labels, dtype=object))
        points = engine.explore_hyperparameters(model, n_per_dim=n_per_dim)
        return (engine.latent_marginals(model, points),
                engine.hyper_atoms(model, points))

    if workers > 1 and len(draws.draws) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(fit_one, draws.draws))
    else:
        fits = [fit_one(labels) for labels in draws.draws]

    if len(fits) == 1:
        # single completion: expose the direct fit untouched
        latent = {name: PooledMarginal((m,), m) for name, m in fits[0][0].items()}
        hyper = {name: weighted_atom_summary(vals, weights)
                 for name, (vals, weights) in fits[0][1].items()}
    else:
        latent = pool_marginals([marg for marg, _ in fits])
        hyper = _pool_hyper_atoms([atoms for _, atoms in fits])
    return PooledAnalysis(table, draws, latent, hyper)
