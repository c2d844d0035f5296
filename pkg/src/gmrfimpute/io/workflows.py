"""Batch workflows behind the CLI: fit, sensitivity, simulation, report.

Every workflow takes a RunConfig, computes in memory (model fits may run
on a bounded thread pool), then writes each output file exactly once
from the orchestrating thread. Output files start with a provenance
comment line carrying the effective-config hash and the seed, numbers
are written at full precision in the CSVs and as mean (sd) rounded to 3
decimals in the aligned text tables, and the machine-readable CSVs parse
back with parse_results_csv / parse_simulation_csv.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import engine
from ..categorical import CategoricalWithGaps, multiple_imputation_fit
from ..effects import CovariateWithGaps
from ..errors import ConfigError, GmrfImputeError, ParseError
from ..gmrf import scale_adjacency
from ..missingness import (
    MissingnessScenario,
    MissingnessSubmodel,
    attach_missingness_submodel,
    simulate_mask,
)
from ..model import CopyLink, EffectDecl, ModelSpec
from ..sids import covariate_transform
from .config import RunConfig
from .datasets import Dataset, load_adjacency, load_dataset

MISSING_CELL = "NA"

# raised for broken inputs, not failed fits; workflows never swallow these
USAGE_ERRORS = (ConfigError, ParseError)

# simulation-table presentation: column label -> parameter names that fill it
SIM_COLUMNS = ("alpha", "beta", "tau_I", "rho_I", "alpha_I", "alpha_M",
               "beta_M")


def _resolve(cfg: RunConfig, path: str) -> str:
    if os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(cfg.base_dir, path))


def load_inputs(cfg: RunConfig):
    dataset = load_dataset(_resolve(cfg, cfg.dataset))
    adjacency = (load_adjacency(_resolve(cfg, cfg.adjacency))
                 if cfg.adjacency else None)
    return dataset, adjacency


def display_name(name: str) -> str:
    """Internal hyperparameter names to natural-scale output names."""
    if name.endswith(".log_tau"):
        return name[:-8] + ".tau"
    if name.endswith(".logit_rho"):
        return name[:-10] + ".rho"
    return name


class ModelBuilder:
    """Assembles ModelSpec instances from a config and a dataset."""

    def __init__(self, cfg: RunConfig, dataset: Dataset, adjacency=None):
        self.cfg = cfg
        self.dataset = dataset
        self.adjacency = adjacency
        self.scaled_adjacency = (scale_adjacency(adjacency)
                                 if adjacency is not None else None)
        self.n = dataset.n_rows
        for col in ((cfg.response,) + cfg.fixed_columns
                    + cfg.missingness_columns + tuple(cfg.mi_groups)):
            dataset.column(col)
        if cfg.offset is not None:
            dataset.column(cfg.offset)
        if cfg.mi_column is not None:
            dataset.column(cfg.mi_column)

    def response(self) -> np.ndarray:
        y = self.dataset.numeric(self.cfg.response)
        if self.cfg.standardize_response:
            obs = y[np.isfinite(y)]
            if obs.size < 2:
                raise ConfigError("cannot standardize a response with fewer "
                                  "than two observed values")
            sd = float(obs.std(ddof=1))
            if sd == 0.0:
                raise ConfigError("cannot standardize a constant response")
            y = (y - obs.mean()) / sd
        return y

    def offsets(self):
        if self.cfg.offset is None:
            return None
        vals = self.dataset.numeric(self.cfg.offset)
        if np.any(~np.isfinite(vals)):
            raise ConfigError("offset column must be fully observed")
        if self.cfg.offset_log:
            if np.any(vals <= 0):
                raise ConfigError("offset values must be positive to log")
            return np.log(vals)
        return vals

    def _expand(self, col, prefix):
        column = self.dataset.column(col)
        if column.kind == "categorical":
            matrix, names = self.dataset.dummies(col)
            return matrix, [f"{prefix}.{n}" for n in names]
        vals = self.dataset.numeric(col)
        if np.any(~np.isfinite(vals)):
            raise ConfigError(f"design column {col!r} has missing cells")
        return vals[:, None], [f"{prefix}.{col}"]

    def fixed_design(self, extra=None):
        cols, names = [], []
        if self.cfg.fixed_intercept:
            cols.append(np.ones((self.n, 1)))
            names.append("alpha")
        for col in self.cfg.fixed_columns:
            m, nm = self._expand(col, "beta")
            cols.append(m)
            names.extend(nm)
        if extra is not None:
            matrix, extra_names = extra
            cols.append(matrix)
            names.extend(extra_names)
        if not cols:
            raise ConfigError("the fixed design is empty; enable the "
                              "intercept or list fixed columns")
        return np.hstack(cols), names

    def effect_covariate(self, eff_cfg) -> np.ndarray:
        """The effect's covariate with NaN at missing entries."""
        if eff_cfg.covariate is not None:
            return self.dataset.numeric(eff_cfg.covariate)
        num = self.dataset.numeric(eff_cfg.numerator)
        den = self.dataset.numeric(eff_cfg.denominator)
        if np.any(~np.isfinite(num)) or np.any(~np.isfinite(den)):
            raise ConfigError("ratio covariate counts must be fully observed")
        return covariate_transform(num, den, eff_cfg.transform)

    def effect_decl(self, eff_cfg, values=None) -> EffectDecl:
        vals = self.effect_covariate(eff_cfg) if values is None else values
        link = CopyLink(np.arange(self.n), np.arange(self.n), "copy")
        if eff_cfg.kind == "linreg":
            cols = [np.ones((self.n, 1))]
            for col in eff_cfg.design_cols:
                m, _ = self._expand(col, "imp")
                cols.append(m)
            return EffectDecl(eff_cfg.name, CovariateWithGaps(vals), "linreg",
                              design=np.hstack(cols), links=(link,))
        if self.scaled_adjacency is None:
            raise ConfigError(f"effect {eff_cfg.name!r} needs an adjacency")
        if self.scaled_adjacency.dim != self.n:
            raise ConfigError("adjacency node count must match the dataset")
        return EffectDecl(eff_cfg.name, CovariateWithGaps(vals), "car",
                          adjacency=self.scaled_adjacency, links=(link,))

    def model(self, variant=None, extra_fixed=None, covariate_values=None,
              include_effects=True) -> ModelSpec:
        """The joint model; covariate_values overrides the masked covariate
        of the missingness target (simulation cells re-mask it)."""
        effects = []
        if include_effects:
            for eff_cfg in self.cfg.effects:
                vals = None
                if (covariate_values is not None
                        and eff_cfg.name == self.cfg.missingness_of):
                    vals = covariate_values
                effects.append(self.effect_decl(eff_cfg, vals))
        fixed, names = self.fixed_design(extra=extra_fixed)
        model = ModelSpec(self.response(), self.cfg.family, fixed,
                          fixed_names=names, offsets=self.offsets(),
                          effects=tuple(effects),
                          pinning_precision=self.cfg.pinning_precision)
        if variant is None:
            return model
        target = next(e for e in effects if e.name == self.cfg.missingness_of)
        indicator = np.zeros(self.n)
        indicator[target.cov.partition.mis] = 1.0
        design, design_names = None, None
        if variant == "MAR":
            if not self.cfg.missingness_columns:
                raise ConfigError("the MAR variant needs missingness.columns")
            cols, design_names = [], []
            for col in self.cfg.missingness_columns:
                m, nm = self._expand(col, "miss")
                cols.append(m)
                design_names.extend(nm)
            design = np.hstack(cols)
        sub = MissingnessSubmodel(indicator, self.cfg.missingness_of,
                                  design=design, design_names=design_names)
        return attach_missingness_submodel(model, sub, variant)

    def complete_data_model(self) -> ModelSpec:
        """Analysis model with the covariate as an ordinary fixed column."""
        eff_cfg = next(e for e in self.cfg.effects
                       if e.name == self.cfg.missingness_of)
        vals = self.effect_covariate(eff_cfg)
        if np.any(~np.isfinite(vals)):
            raise ConfigError("the complete-data fit needs a fully observed "
                              "covariate")
        extra = (vals[:, None], [f"beta.{eff_cfg.name}"])
        return self.model(variant=None, extra_fixed=extra,
                          include_effects=False)


def _explore(model, cfg: RunConfig, workers=None):
    return engine.explore_hyperparameters(
        model, workers=cfg.workers if workers is None else workers,
        n_per_dim=cfg.grid_points)


def _marginal_row(name, sub_model, marginal) -> dict:
    return {"parameter": name, "sub-model": sub_model,
            "mean": marginal.mean, "sd": marginal.sd,
            "q2.5": marginal.quantiles[0.025],
            "q50": marginal.quantiles[0.5],
            "q97.5": marginal.quantiles[0.975]}


def _summary_row(name, sub_model, s) -> dict:
    return {"parameter": name, "sub-model": sub_model,
            "mean": s["mean"], "sd": s["sd"], "q2.5": s["q2.5"],
            "q50": s["q50"], "q97.5": s["q97.5"]}


def collect_rows(model: ModelSpec, latent, hyper) -> list:
    """Result rows in presentation order: Analysis, Imputation, Missingness.

    latent maps names to marginals, hyper maps internal names to summary
    dicts; both come straight from the engine (or from the MI pooling,
    which shares the shapes).
    """
    rows = []
    for name in model.fixed_names:
        if not name.startswith("miss."):
            rows.append(_marginal_row(name, "Analysis", latent[name]))
    for eff in model.effects:
        if eff.has_copy:
            rows.append(_summary_row(f"{eff.name}.copy", "Analysis",
                                     hyper[f"{eff.name}.copy"]))
    if "lik.log_tau" in hyper:
        rows.append(_summary_row("lik.tau", "Analysis",
                                 hyper["lik.log_tau"]))
    for eff in model.effects:
        for sub in eff.submodel_names:
            rows.append(_summary_row(display_name(sub), "Imputation",
                                     hyper[sub]))
    for name in model.fixed_names:
        if name.startswith("miss."):
            rows.append(_marginal_row(name, "Missingness", latent[name]))
    if "mnar.delta" in hyper:
        rows.append(_summary_row("mnar.delta", "Missingness",
                                 hyper["mnar.delta"]))
    return rows


def fit_model_rows(model: ModelSpec, cfg: RunConfig, workers=None):
    points = _explore(model, cfg, workers=workers)
    latent = engine.latent_marginals(model, points)
    hyper = engine.hyper_summaries(model, points)
    return collect_rows(model, latent, hyper), latent


def _fmt(value) -> str:
    if value is None:
        return MISSING_CELL
    return format(float(value), ".12g")


def _header_line(cfg: RunConfig) -> str:
    return f"# config={cfg.sha256()} seed={cfg.seed}"


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


RESULT_FIELDS = ("parameter", "sub-model", "mean", "sd", "q2.5", "q50",
                 "q97.5")


def results_csv_text(rows, cfg, extra_fields=()) -> str:
    fields = tuple(extra_fields) + RESULT_FIELDS
    lines = [_header_line(cfg), ",".join(fields)]
    for row in rows:
        cells = []
        for f in fields:
            v = row.get(f)
            cells.append(str(v) if f in ("parameter", "sub-model", "variant",
                                         "scenario", "status")
                         else _fmt(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def parse_results_csv(path) -> list:
    """Rows back out of a results CSV; numeric cells become floats."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ParseError(f"{path}: no table content")
    fields = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != len(fields):
            raise ParseError(f"{path}: ragged row {ln!r}")
        row = {}
        for f, c in zip(fields, cells):
            if f in ("parameter", "sub-model", "variant", "scenario",
                     "status", "stratum", "level", "model", "mechanism"):
                row[f] = c
            else:
                row[f] = None if c == MISSING_CELL else float(c)
        rows.append(row)
    return rows


def _estimate(mean, sd) -> str:
    if mean is None:
        return MISSING_CELL
    return f"{mean:.3f} ({sd:.3f})"


def summary_table_text(rows, cfg) -> str:
    """Aligned single-fit table grouped by sub-model."""
    width = max(len("parameter"),
                max(len(r["parameter"]) for r in rows)) + 2
    lines = [_header_line(cfg), f"{'parameter':<{width}}estimate"]
    current = None
    for row in rows:
        if row["sub-model"] != current:
            current = row["sub-model"]
            lines.append(f"== {current} ==")
        lines.append(f"{row['parameter']:<{width}}"
                     f"{_estimate(row['mean'], row['sd'])}")
    return "\n".join(lines) + "\n"


def sensitivity_table_text(rows_by_variant, cfg) -> str:
    """Side-by-side variant columns in the three-column table layout."""
    variants = list(rows_by_variant)
    order, seen = [], set()
    for rows in rows_by_variant.values():
        for r in rows:
            key = (r["sub-model"], r["parameter"])
            if key not in seen:
                seen.add(key)
                order.append(key)
    by_key = {v: {(r["sub-model"], r["parameter"]): r for r in rows}
              for v, rows in rows_by_variant.items()}
    width = max(len("parameter"), max(len(p) for _, p in order)) + 2
    cell = 20
    head = f"{'parameter':<{width}}" + "".join(f"{v:<{cell}}" for v in variants)
    lines = [_header_line(cfg), head.rstrip()]
    current = None
    for sub, param in order:
        if sub != current:
            current = sub
            lines.append(f"== {current} ==")
        cells = []
        for v in variants:
            row = by_key[v].get((sub, param))
            cells.append(_estimate(row["mean"], row["sd"]) if row
                         else MISSING_CELL)
        line = (f"{param:<{width}}" + "".join(f"{c:<{cell}}" for c in cells))
        lines.append(line.rstrip())
    return "\n".join(lines) + "\n"


def _scenario_id(mechanism, proportion) -> str:
    pct = proportion * 100
    tag = f"{pct:g}"
    return f"{mechanism}{tag}"


def _sim_cell_map(effect_name):
    return {
        "alpha": ("alpha", f"beta.{effect_name}"),
        "beta": (f"{effect_name}.copy", f"beta.{effect_name}"),
        "tau_I": (f"{effect_name}.tau",),
        "rho_I": (f"{effect_name}.rho",),
        "alpha_I": (f"{effect_name}.alpha",),
        "alpha_M": ("miss.alpha",),
        "beta_M": ("mnar.delta",),
    }


def simulation_table_text(rows, cfg, effect_name) -> str:
    """Wide mechanism-by-proportion table with one column per parameter."""
    cell_map = _sim_cell_map(effect_name)
    scenarios, seen = [], set()
    for r in rows:
        if r["scenario"] not in seen:
            seen.add(r["scenario"])
            scenarios.append(r["scenario"])
    by_scenario = {}
    for r in rows:
        by_scenario.setdefault(r["scenario"], {})[r["parameter"]] = r
    width = max(len("scenario"), max(len(s) for s in scenarios)) + 2
    cell = 20
    head = f"{'scenario':<{width}}" + "".join(f"{c:<{cell}}"
                                              for c in SIM_COLUMNS)
    lines = [_header_line(cfg), head.rstrip()]
    for s in scenarios:
        params = by_scenario[s]
        if any(r.get("status") == "failed" for r in params.values()):
            line = f"{s:<{width}}" + "".join(
                f"{'failed':<{cell}}" for _ in SIM_COLUMNS)
            lines.append(line.rstrip())
            continue
        cells = []
        for col in SIM_COLUMNS:
            row = None
            for name in cell_map[col]:
                if name in params:
                    row = params[name]
                    break
            cells.append(_estimate(row["mean"], row["sd"]) if row
                         else MISSING_CELL)
        line = f"{s:<{width}}" + "".join(f"{c:<{cell}}" for c in cells)
        lines.append(line.rstrip())
    return "\n".join(lines) + "\n"


def density_csv_text(entries, cfg) -> str:
    lines = [_header_line(cfg), "model,mechanism,proportion,x,density"]
    for model_tag, mech, prop, marginal in entries:
        for x, d in zip(marginal.grid, marginal.density):
            lines.append(f"{model_tag},{mech},{prop:g},{_fmt(x)},{_fmt(d)}")
    return "\n".join(lines) + "\n"


def mask_csv_text(masks, proportions, cfg) -> str:
    tags = [f"p{p * 100:g}" for p in proportions]
    lines = [_header_line(cfg), "county," + ",".join(tags)]
    n = masks[0].size
    for i in range(n):
        cells = [str(int(m[i])) for m in masks]
        lines.append(f"{i}," + ",".join(cells))
    return "\n".join(lines) + "\n"


class WorkflowResult:
    """Exit code, emitted files, and any captured failures."""

    __slots__ = ("exit_code", "files", "errors")

    def __init__(self, exit_code, files, errors):
        self.exit_code = int(exit_code)
        self.files = list(files)
        self.errors = list(errors)


def _finish(cfg, out_dir, files, errors) -> WorkflowResult:
    if errors:
        path = os.path.join(out_dir, "errors.jsonl")
        _write(path, "".join(json.dumps(e, sort_keys=True) + "\n"
                             for e in errors))
        files.append(path)
    return WorkflowResult(1 if errors else 0, files, errors)


def _out_dir(cfg: RunConfig) -> str:
    out = cfg.output
    if not os.path.isabs(out):
        out = os.path.join(os.getcwd(), out)
    os.makedirs(out, exist_ok=True)
    return out


def _error_entry(stage, exc, **context) -> dict:
    entry = {"stage": stage, "error": type(exc).__name__,
             "message": str(exc)}
    entry.update(context)
    return entry


def run_fit(cfg: RunConfig) -> WorkflowResult:
    """One model fit; writes results.csv and summary.txt, plus the MI
    probability table and pooled results when a categorical MI column is
    configured."""
    out = _out_dir(cfg)
    files, errors = [], []
    dataset, adjacency = load_inputs(cfg)
    builder = ModelBuilder(cfg, dataset, adjacency)
    try:
        model = builder.model(variant=cfg.missingness_variant)
        rows, _ = fit_model_rows(model, cfg)
    except USAGE_ERRORS:
        raise
    except GmrfImputeError as exc:
        errors.append(_error_entry("fit", exc,
                                   variant=cfg.missingness_variant or "none"))
        return _finish(cfg, out, files, errors)
    path = os.path.join(out, "results.csv")
    _write(path, results_csv_text(rows, cfg))
    files.append(path)
    path = os.path.join(out, "summary.txt")
    _write(path, summary_table_text(rows, cfg))
    files.append(path)

    if cfg.mi_column is not None:
        try:
            files.extend(_run_mi_stage(cfg, dataset, builder, out))
        except USAGE_ERRORS:
            raise
        except GmrfImputeError as exc:
            errors.append(_error_entry("mi", exc, column=cfg.mi_column))
    return _finish(cfg, out, files, errors)


def _run_mi_stage(cfg: RunConfig, dataset: Dataset, builder: ModelBuilder,
                  out: str) -> list:
    labels = dataset.categorical(cfg.mi_column)
    levels = dataset.levels(cfg.mi_column)
    groups = np.empty((dataset.n_rows, len(cfg.mi_groups)), dtype=object)
    for j, col in enumerate(cfg.mi_groups):
        col_labels = dataset.categorical(col)
        if any(v is None for v in col_labels):
            raise ConfigError(f"mi.groups column {col!r} has missing cells")
        groups[:, j] = col_labels
    cat = CategoricalWithGaps(levels, labels, groups)

    outcome = None
    if cfg.mi_include_outcome:
        if cfg.family != "bernoulli":
            raise ConfigError("mi.include_outcome needs a discrete "
                              "(bernoulli) response")
        outcome = [str(v) for v in builder.response()]

    coef_names = [f"beta.{cfg.mi_column}.{lev}" for lev in levels[1:]]

    def build_model(completed):
        matrix = np.column_stack(
            [[1.0 if lab == lev else 0.0 for lab in completed]
             for lev in levels[1:]])
        return builder.model(variant=cfg.missingness_variant,
                             extra_fixed=(matrix, coef_names))

    pooled = multiple_imputation_fit(
        cat, build_model, L=cfg.mi_draws, rng=cfg.seed, workers=cfg.workers,
        include_outcome=cfg.mi_include_outcome, outcome=outcome,
        n_per_dim=cfg.grid_points)

    files = []
    lines = [_header_line(cfg), "stratum,level,probability"]
    for g, stratum in enumerate(pooled.table.strata):
        tag = "/".join(str(part) for part in stratum)
        for k, lev in enumerate(pooled.table.levels):
            lines.append(f"{tag},{lev},{_fmt(pooled.table.probs[g, k])}")
    path = os.path.join(out, "mi_probabilities.csv")
    _write(path, "\n".join(lines) + "\n")
    files.append(path)

    reference = build_model(np.asarray(
        [lab if lab is not None else levels[0] for lab in labels],
        dtype=object))
    latent = {name: pm.pooled for name, pm in pooled.latent.items()}
    rows = collect_rows(reference, latent, pooled.hyper)
    path = os.path.join(out, "mi_pooled.csv")
    _write(path, results_csv_text(rows, cfg))
    files.append(path)
    path = os.path.join(out, "mi_summary.txt")
    _write(path, summary_table_text(rows, cfg))
    files.append(path)
    return files


def run_sensitivity(cfg: RunConfig) -> WorkflowResult:
    """Fit every listed missingness variant on the same data side by side."""
    if len(cfg.sensitivity_variants) < 2:
        raise ConfigError("sensitivity needs at least two variants in "
                          "sensitivity.variants")
    if "MAR" in cfg.sensitivity_variants and not cfg.missingness_columns:
        raise ConfigError("the MAR variant needs missingness.columns")
    out = _out_dir(cfg)
    files, errors = [], []
    dataset, adjacency = load_inputs(cfg)
    builder = ModelBuilder(cfg, dataset, adjacency)
    rows_by_variant = {}
    for variant in cfg.sensitivity_variants:
        try:
            model = builder.model(variant=variant)
            rows, _ = fit_model_rows(model, cfg)
            rows_by_variant[variant] = rows
        except USAGE_ERRORS:
            raise
        except GmrfImputeError as exc:
            errors.append(_error_entry("sensitivity", exc, variant=variant))

    long_rows = []
    for variant, rows in rows_by_variant.items():
        for r in rows:
            long_rows.append({"variant": variant, **r})
    path = os.path.join(out, "sensitivity.csv")
    _write(path, results_csv_text(long_rows, cfg, extra_fields=("variant",)))
    files.append(path)
    if rows_by_variant:
        path = os.path.join(out, "sensitivity.txt")
        _write(path, sensitivity_table_text(rows_by_variant, cfg))
        files.append(path)

    means = {}
    for variant, rows in rows_by_variant.items():
        for r in rows:
            means.setdefault(r["parameter"], []).append(r["mean"])
    lines = [_header_line(cfg), "parameter,max_abs_diff"]
    order, seen = [], set()
    for rows in rows_by_variant.values():
        for r in rows:
            if r["parameter"] not in seen:
                seen.add(r["parameter"])
                order.append(r["parameter"])
    for param in order:
        vals = means[param]
        diff = (max(vals) - min(vals)) if len(vals) > 1 else None
        lines.append(f"{param},{_fmt(diff)}")
    path = os.path.join(out, "differences.csv")
    _write(path, "\n".join(lines) + "\n")
    files.append(path)
    return _finish(cfg, out, files, errors)


def run_simulation_study(cfg: RunConfig) -> WorkflowResult:
    """Masks for every mechanism and proportion, both model variants per
    mask, two wide tables, per-county density files, and the masks."""
    if not cfg.simulate_proportions or not cfg.simulate_mechanisms:
        raise ConfigError("simulation needs simulate.proportions and "
                          "simulate.mechanisms")
    if cfg.adjacency is None:
        raise ConfigError("simulation needs an adjacency file")
    if cfg.missingness_of is None:
        raise ConfigError("simulation needs a declared imputation effect")
    out = _out_dir(cfg)
    files, errors = [], []
    dataset, adjacency = load_inputs(cfg)
    builder = ModelBuilder(cfg, dataset, adjacency)
    eff_name = cfg.missingness_of
    eff_cfg = next(e for e in cfg.effects if e.name == eff_name)
    covariate = builder.effect_covariate(eff_cfg)
    if np.any(~np.isfinite(covariate)):
        raise ConfigError("the simulation covariate must be fully observed")

    root = np.random.SeedSequence(cfg.seed)
    mask_seeds = root.spawn(len(cfg.simulate_mechanisms))
    masks_by_mech = {}
    for mech, seq in zip(cfg.simulate_mechanisms, mask_seeds):
        scenario = MissingnessScenario(mech, cfg.simulate_proportions,
                                       mnar_slope=cfg.simulate_mnar_slope,
                                       mnar_intercept=cfg.simulate_mnar_intercept)
        masks_by_mech[mech] = simulate_mask(covariate, scenario,
                                            np.random.default_rng(seq))
        path = os.path.join(out, f"masks_{mech.lower()}.csv")
        _write(path, mask_csv_text(masks_by_mech[mech],
                                   cfg.simulate_proportions, cfg))
        files.append(path)

    cells = []
    for mech in cfg.simulate_mechanisms:
        for prop, mask in zip(cfg.simulate_proportions, masks_by_mech[mech]):
            cells.append((mech, prop, mask))

    def fit_cell(args):
        variant, mech, prop, mask = args
        masked = np.where(mask, np.nan, covariate)
        model = builder.model(variant=variant, covariate_values=masked)
        points = engine.explore_hyperparameters(model, workers=1,
                                                n_per_dim=cfg.grid_points)
        latent = engine.latent_marginals(model, points)
        hyper = engine.hyper_summaries(model, points)
        return collect_rows(model, latent, hyper), latent

    table_rows = {"MCAR": [], "MNAR": []}
    density_entries = {i: [] for i in cfg.simulate_counties}

    try:
        full_model = builder.complete_data_model()
        full_rows, _ = fit_model_rows(full_model, cfg)
        for variant in ("MCAR", "MNAR"):
            for r in full_rows:
                table_rows[variant].append(
                    {"scenario": "full", "status": "ok", **r})
    except USAGE_ERRORS:
        raise
    except GmrfImputeError as exc:
        errors.append(_error_entry("simulate", exc, scenario="full",
                                   model="complete"))
        for variant in ("MCAR", "MNAR"):
            table_rows[variant].append(
                {"scenario": "full", "status": "failed",
                 "parameter": MISSING_CELL, "sub-model": MISSING_CELL})

    jobs = [(variant, mech, prop, mask)
            for variant in ("MCAR", "MNAR")
            for (mech, prop, mask) in cells]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(
                lambda j: _guarded_fit(fit_cell, j), jobs))
    else:
        outcomes = [_guarded_fit(fit_cell, j) for j in jobs]

    for (variant, mech, prop, mask), outcome in zip(jobs, outcomes):
        sid = _scenario_id(mech, prop)
        if isinstance(outcome, GmrfImputeError):
            errors.append(_error_entry("simulate", outcome, scenario=sid,
                                       model=variant))
            table_rows[variant].append(
                {"scenario": sid, "status": "failed",
                 "parameter": MISSING_CELL, "sub-model": MISSING_CELL})
            continue
        rows, latent = outcome
        for r in rows:
            table_rows[variant].append({"scenario": sid, "status": "ok", **r})
        for county in cfg.simulate_counties:
            name = f"{eff_name}[{county}]"
            if name in latent:
                density_entries[county].append(
                    (variant, mech, prop, latent[name]))

    for variant in ("MCAR", "MNAR"):
        tag = variant.lower()
        rows = table_rows[variant]
        path = os.path.join(out, f"simulation_{tag}_model.csv")
        _write(path, results_csv_text(rows, cfg,
                                      extra_fields=("scenario", "status")))
        files.append(path)
        path = os.path.join(out, f"simulation_{tag}_model.txt")
        _write(path, simulation_table_text(rows, cfg, eff_name))
        files.append(path)

    for county, entries in density_entries.items():
        path = os.path.join(out, f"density_county{county}.csv")
        _write(path, density_csv_text(entries, cfg))
        files.append(path)
    return _finish(cfg, out, files, errors)


def _guarded_fit(fn, job):
    try:
        return fn(job)
    except USAGE_ERRORS:
        raise
    except GmrfImputeError as exc:
        return exc


def run_report(results_dir) -> int:
    """Re-render every recognized results CSV in a directory to stdout."""
    results_dir = str(results_dir)
    if not os.path.isdir(results_dir):
        raise ParseError(f"no such results directory: {results_dir}")
    names = sorted(os.listdir(results_dir))
    rendered = 0
    for name in names:
        if not name.endswith(".csv"):
            continue
        path = os.path.join(results_dir, name)
        with open(path) as fh:
            header = fh.readline().rstrip("\n")
        rows = parse_results_csv(path)
        if not rows or "parameter" not in rows[0] or "sub-model" not in rows[0]:
            continue
        print(f"=== {name} ===")
        if header.startswith("#"):
            print(header)
        if "scenario" in rows[0]:
            effect = _infer_effect_name(rows)
            print(_rows_to_sim_text(rows, effect), end="")
        elif "variant" in rows[0]:
            by_variant = {}
            for r in rows:
                by_variant.setdefault(r["variant"], []).append(r)
            print(_rows_to_sensitivity_text(by_variant), end="")
        else:
            print(_rows_to_summary_text(rows), end="")
        print()
        rendered += 1
    if rendered == 0:
        raise ParseError(f"{results_dir}: no renderable results files")
    return 0


def _infer_effect_name(rows):
    for r in rows:
        p = r.get("parameter", "")
        if p.endswith(".copy"):
            return p[:-5]
    return "x"


class _NullConfig:
    """Stand-in so the shared renderers can skip the provenance line."""

    @staticmethod
    def sha256():
        return ""

    seed = ""


def _strip_header(text):
    return "".join(ln for ln in text.splitlines(keepends=True)
                   if not ln.startswith("# config="))


def _rows_to_summary_text(rows):
    return _strip_header(summary_table_text(rows, _NullConfig))


def _rows_to_sensitivity_text(by_variant):
    return _strip_header(sensitivity_table_text(by_variant, _NullConfig))


def _rows_to_sim_text(rows, effect):
    return _strip_header(simulation_table_text(rows, _NullConfig, effect))
