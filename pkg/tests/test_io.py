"""File parsing, run configuration, and the batch workflow outputs."""

import os

import numpy as np
import pytest

from gmrfimpute import engine
from gmrfimpute.errors import ConfigError, ExplorationFailed, ParseError
from gmrfimpute.io import (
    bundled_config_path,
    bundled_path,
    load_adjacency,
    load_config,
    load_dataset,
    parse_adjacency_text,
    parse_config_text,
    parse_dataset_text,
    parse_results_csv,
    run_fit,
    run_report,
    run_sensitivity,
    run_simulation_study,
)
from gmrfimpute.io.cli import _transform_overrides, main
from gmrfimpute.io.config import RunConfig
from gmrfimpute.io.workflows import display_name
from gmrfimpute.sids import rook_adjacency, simulate_replicate

# 12 units, response roughly 1 + 0.8 x, three covariate gaps, one
# two-level grouping column for designs
FIT_CSV = """y,x,g
1.1,0.1,a
1.75,0.9,b
1.3,NA,a
2.0,1.3,b
0.9,-0.2,a
1.5,0.6,b
1.8,NA,a
1.2,0.2,b
1.6,0.8,a
0.6,NA,b
1.9,1.1,a
1.25,0.3,b
"""

FIT_CFG = """dataset = fit.csv
response = y
effect.z.kind = linreg
effect.z.covariate = x
missingness.variant = MCAR
engine.grid_points = 3
"""


def write_fit_inputs(tmp_path, cfg_text=FIT_CFG, out_name="out"):
    (tmp_path / "fit.csv").write_text(FIT_CSV)
    cfg_path = tmp_path / "run.cfg"
    out = tmp_path / out_name
    cfg_path.write_text(cfg_text + f"output = {out}\n")
    return str(cfg_path), str(out)


def write_lattice_inputs(tmp_path, side=4, seed=7, extra=""):
    rep = simulate_replicate(seed, side=side, mean_expected=8.0)
    cols = rep.to_columns()
    names = list(cols)
    lines = [",".join(names)]
    for i in range(rep.n):
        lines.append(",".join(str(int(cols[c][i])) for c in names))
    (tmp_path / "lattice.csv").write_text("\n".join(lines) + "\n")
    adj = rep.adjacency
    pairs = sorted({(min(i, j), max(i, j))
                    for i, j, v in zip(adj.rows, adj.cols, adj.vals)
                    if v > 0})
    adj_lines = [str(rep.n)] + [f"{i} {j}" for i, j in pairs]
    (tmp_path / "lattice_adj.txt").write_text("\n".join(adj_lines) + "\n")
    out = tmp_path / "sim_out"
    cfg_path = tmp_path / "sim.cfg"
    cfg_path.write_text(
        "dataset = lattice.csv\n"
        "adjacency = lattice_adj.txt\n"
        "response = observed\n"
        "response.family = poisson\n"
        "offset = expected\n"
        "effect.x.kind = car\n"
        "effect.x.numerator = nonwhite\n"
        "effect.x.denominator = births\n"
        "simulate.mechanisms = MCAR,MNAR\n"
        "engine.grid_points = 3\n"
        "seed = 11\n"
        f"output = {out}\n" + extra)
    return str(cfg_path), str(out), rep


class TestDatasetParsing:
    def test_bundled_nhanes2(self):
        ds = load_dataset(bundled_path("nhanes2.csv"))
        assert ds.n_rows == 25
        assert ds.names == ["age", "bmi", "hyp", "chl"]
        assert ds.column("bmi").n_missing == 9
        assert ds.column("chl").n_missing == 10
        assert ds.column("age").kind == "categorical"
        assert ds.column("bmi").kind == "real"

    def test_missing_token_is_case_sensitive(self):
        with pytest.raises(ParseError, match="coerce"):
            parse_dataset_text("x\n1.5\nna\n")
        # in a categorical column lowercase na is just another level
        ds = parse_dataset_text("g\nna\nyes\n")
        assert ds.levels("g") == ["na", "yes"]

    def test_empty_file(self):
        with pytest.raises(ParseError, match="empty"):
            parse_dataset_text("")

    def test_header_only(self):
        with pytest.raises(ParseError, match="no data rows"):
            parse_dataset_text("a,b\n")

    def test_ragged_row_coordinates(self):
        with pytest.raises(ParseError, match="row 3 has 1 cells"):
            parse_dataset_text("a,b\n1,2\n3\n")

    def test_duplicate_header(self):
        with pytest.raises(ParseError, match="duplicate column"):
            parse_dataset_text("a,a\n1,2\n")

    def test_blank_header_name(self):
        with pytest.raises(ParseError, match="blank column"):
            parse_dataset_text("a,\n1,2\n")

    def test_coercion_failure_coordinates(self):
        with pytest.raises(ParseError, match="row 4, column 'v'"):
            parse_dataset_text("v\n1.5\n2.5\noops\n")

    def test_integer_promotes_to_real(self):
        ds = parse_dataset_text("n\n1\n2.5\n3\n")
        assert ds.column("n").kind == "real"
        assert ds.column("n").values == [1.0, 2.5, 3.0]

    def test_integer_column_stays_integer(self):
        ds = parse_dataset_text("n\n1\nNA\n3\n")
        assert ds.column("n").kind == "integer"
        vals = ds.numeric("n")
        assert np.isnan(vals[1]) and vals[2] == 3.0

    def test_numeric_on_categorical_errors(self):
        ds = parse_dataset_text("g\na\nb\n")
        with pytest.raises(ParseError, match="categorical"):
            ds.numeric("g")

    def test_unknown_column(self):
        ds = parse_dataset_text("a\n1\n")
        with pytest.raises(ParseError, match="no column named"):
            ds.column("b")

    def test_dummies_drop_first_level(self):
        ds = parse_dataset_text("g\nb\na\nc\na\n")
        matrix, names = ds.dummies("g")
        assert names == ["g.b", "g.c"]
        assert matrix.tolist() == [[1.0, 0.0], [0.0, 0.0], [0.0, 1.0],
                                   [0.0, 0.0]]

    def test_dummies_need_full_observation(self):
        ds = parse_dataset_text("g\na\nNA\nb\n")
        with pytest.raises(ParseError, match="missing cells"):
            ds.dummies("g")

    def test_categorical_accessor(self):
        ds = parse_dataset_text("g\nx\nNA\ny\n")
        assert ds.categorical("g") == ["x", None, "y"]
        assert ds.levels("g") == ["x", "y"]


class TestAdjacencyParsing:
    def test_bundled_sids_adjacency(self):
        adj = load_adjacency(bundled_path("sids_adjacency.txt"))
        expected = rook_adjacency(10)
        assert adj.dim == 100
        assert np.array_equal(adj.to_dense(), expected.to_dense())

    def test_small_roundtrip(self):
        adj = parse_adjacency_text("3\n0 1\n1 2\n")
        dense = adj.to_dense()
        assert dense[0, 1] == 1.0 and dense[1, 0] == 1.0
        assert dense[1, 2] == 1.0 and dense[0, 2] == 0.0
        assert np.all(np.diag(dense) == 0.0)

    def test_rejects_bad_count(self):
        with pytest.raises(ParseError, match="node count"):
            parse_adjacency_text("abc\n0 1\n")

    def test_rejects_self_loop(self):
        with pytest.raises(ParseError, match="self-loop"):
            parse_adjacency_text("3\n1 1\n")

    def test_rejects_duplicate_edge(self):
        with pytest.raises(ParseError, match="duplicate"):
            parse_adjacency_text("3\n0 1\n1 0\n")

    def test_rejects_out_of_range(self):
        with pytest.raises(ParseError, match="out of range"):
            parse_adjacency_text("3\n0 3\n")

    def test_rejects_wrong_token_count(self):
        with pytest.raises(ParseError, match="expected 'i j'"):
            parse_adjacency_text("3\n0 1 2\n")

    def test_rejects_empty(self):
        with pytest.raises(ParseError, match="empty"):
            parse_adjacency_text("")
        with pytest.raises(ParseError, match="no edges"):
            parse_adjacency_text("4\n")


class TestConfigParsing:
    def test_key_value_lines(self):
        entries = parse_config_text("# comment\na = 1\n\nb=two\n")
        assert entries == {"a": "1", "b": "two"}

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate key"):
            parse_config_text("a = 1\na = 2\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="key=value"):
            parse_config_text("just words\n")


def minimal_entries(**extra):
    entries = {"dataset": "d.csv", "response": "y"}
    entries.update({k: str(v) for k, v in extra.items()})
    return entries


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig(minimal_entries())
        assert cfg.seed == 0 and cfg.workers == 1
        assert cfg.grid_points == 5 and cfg.pinning_precision == 1e10
        assert cfg.family == "gaussian" and cfg.output == "results"
        assert cfg.fixed_intercept and cfg.offset_log
        assert cfg.mi_draws == 100 and not cfg.mi_include_outcome

    def test_requires_dataset_and_response(self):
        with pytest.raises(ConfigError, match="dataset"):
            RunConfig({"response": "y"})
        with pytest.raises(ConfigError, match="response"):
            RunConfig({"dataset": "d.csv"})

    def test_rejects_unknown_keys(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            RunConfig(minimal_entries(bogus="1"))

    def test_effect_group(self):
        cfg = RunConfig({
            "dataset": "d.csv", "response": "y", "adjacency": "a.txt",
            "effect.u.kind": "car", "effect.u.covariate": "x"})
        eff = cfg.effects[0]
        assert eff.name == "u" and eff.kind == "car"
        assert cfg.missingness_of == "u"

    def test_unknown_effect_subkey(self):
        with pytest.raises(ConfigError, match="unknown effect.u keys"):
            RunConfig(minimal_entries(**{"effect.u.kind": "linreg",
                                         "effect.u.covariate": "x",
                                         "effect.u.shape": "wide"}))

    def test_car_needs_adjacency(self):
        with pytest.raises(ConfigError, match="adjacency"):
            RunConfig(minimal_entries(**{"effect.u.kind": "car",
                                         "effect.u.covariate": "x"}))

    def test_covariate_xor_ratio(self):
        with pytest.raises(ConfigError, match="either a covariate"):
            RunConfig(minimal_entries(**{"effect.u.kind": "linreg"}))
        with pytest.raises(ConfigError, match="not both"):
            RunConfig(minimal_entries(**{"effect.u.kind": "linreg",
                                         "effect.u.covariate": "x",
                                         "effect.u.numerator": "a",
                                         "effect.u.denominator": "b"}))

    def test_validation_errors(self):
        with pytest.raises(ConfigError, match="workers"):
            RunConfig(minimal_entries(workers=0))
        with pytest.raises(ConfigError, match="grid_points"):
            RunConfig(minimal_entries(**{"engine.grid_points": 4}))
        with pytest.raises(ConfigError, match="family"):
            RunConfig(minimal_entries(**{"response.family": "gamma"}))
        with pytest.raises(ConfigError, match="mi.groups"):
            RunConfig(minimal_entries(**{"mi.column": "h"}))
        with pytest.raises(ConfigError, match="fixed column"):
            RunConfig(minimal_entries(fixed="y"))

    def test_missingness_validation(self):
        with pytest.raises(ConfigError, match="imputation effect"):
            RunConfig(minimal_entries(**{"missingness.variant": "MCAR"}))
        with pytest.raises(ConfigError, match="must name the effect"):
            RunConfig(minimal_entries(**{
                "missingness.variant": "MCAR",
                "effect.u.kind": "linreg", "effect.u.covariate": "x1",
                "effect.v.kind": "linreg", "effect.v.covariate": "x2"}))
        with pytest.raises(ConfigError, match="names no declared effect"):
            RunConfig(minimal_entries(**{
                "effect.u.kind": "linreg", "effect.u.covariate": "x1",
                "missingness.of": "w"}))

    def test_hash_tracks_statistical_settings_only(self):
        base = RunConfig(minimal_entries())
        seeded = RunConfig(minimal_entries(seed=7))
        moved = RunConfig(minimal_entries(output="elsewhere", workers=8))
        gridded = RunConfig(minimal_entries(**{"engine.grid_points": 7}))
        assert seeded.sha256() != base.sha256()
        assert gridded.sha256() != base.sha256()
        # destination and parallelism do not change what was computed
        assert moved.sha256() == base.sha256()

    def test_load_config_applies_overrides(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("dataset = d.csv\nresponse = y\nseed = 1\n")
        cfg = load_config(str(p), overrides={"seed": 9})
        assert cfg.seed == 9
        assert cfg.base_dir == str(tmp_path)


class TestDisplayName:
    def test_natural_scale_names(self):
        assert display_name("lik.log_tau") == "lik.tau"
        assert display_name("bmi.log_tau") == "bmi.tau"
        assert display_name("x.logit_rho") == "x.rho"
        assert display_name("x.alpha") == "x.alpha"
        assert display_name("mnar.delta") == "mnar.delta"


class TestFitWorkflow:
    def test_output_files_and_rows(self, tmp_path):
        cfg_path, out = write_fit_inputs(tmp_path)
        cfg = load_config(cfg_path)
        res = run_fit(cfg)
        assert res.exit_code == 0
        rows = parse_results_csv(os.path.join(out, "results.csv"))
        names = [r["parameter"] for r in rows]
        assert names == ["alpha", "z.copy", "lik.tau", "z.b0", "z.tau",
                         "miss.alpha"]
        subs = {r["parameter"]: r["sub-model"] for r in rows}
        assert subs["alpha"] == "Analysis" and subs["z.copy"] == "Analysis"
        assert subs["z.b0"] == "Imputation" and subs["z.tau"] == "Imputation"
        assert subs["miss.alpha"] == "Missingness"
        # the fit finds the simulated slope direction
        copy_row = rows[1]
        assert copy_row["mean"] > 0
        assert copy_row["q2.5"] < copy_row["q50"] < copy_row["q97.5"]

    def test_header_carries_hash_and_seed(self, tmp_path):
        cfg_path, out = write_fit_inputs(tmp_path)
        cfg = load_config(cfg_path)
        run_fit(cfg)
        for name in ("results.csv", "summary.txt"):
            first = open(os.path.join(out, name)).readline()
            assert first == f"# config={cfg.sha256()} seed=0\n"

    def test_mnar_variant_adds_delta_row(self, tmp_path):
        cfg_text = FIT_CFG.replace("missingness.variant = MCAR",
                                   "missingness.variant = MNAR")
        cfg_path, out = write_fit_inputs(tmp_path, cfg_text=cfg_text)
        res = run_fit(load_config(cfg_path))
        assert res.exit_code == 0
        rows = parse_results_csv(os.path.join(out, "results.csv"))
        assert rows[-1]["parameter"] == "mnar.delta"
        assert rows[-1]["sub-model"] == "Missingness"

    def test_mar_variant_uses_design_columns(self, tmp_path):
        cfg_text = FIT_CFG.replace(
            "missingness.variant = MCAR",
            "missingness.variant = MAR\nmissingness.columns = g")
        cfg_path, out = write_fit_inputs(tmp_path, cfg_text=cfg_text)
        res = run_fit(load_config(cfg_path))
        assert res.exit_code == 0
        rows = parse_results_csv(os.path.join(out, "results.csv"))
        names = [r["parameter"] for r in rows]
        assert "miss.alpha" in names and "miss.g.b" in names

    def test_no_effect_fit_is_analysis_only(self, tmp_path):
        cfg_path, out = write_fit_inputs(
            tmp_path, cfg_text="dataset = fit.csv\nresponse = y\n"
                               "fixed = g\nengine.grid_points = 3\n")
        res = run_fit(load_config(cfg_path))
        assert res.exit_code == 0
        rows = parse_results_csv(os.path.join(out, "results.csv"))
        assert [r["parameter"] for r in rows] == ["alpha", "beta.g.b",
                                                  "lik.tau"]
        assert {r["sub-model"] for r in rows} == {"Analysis"}

    def test_byte_identical_reruns(self, tmp_path):
        cfg_path, out1 = write_fit_inputs(tmp_path, out_name="out1")
        run_fit(load_config(cfg_path))
        cfg2 = load_config(cfg_path,
                           overrides={"output": str(tmp_path / "out2"),
                                      "workers": 2})
        run_fit(cfg2)
        for name in ("results.csv", "summary.txt"):
            a = open(os.path.join(out1, name), "rb").read()
            b = open(os.path.join(tmp_path, "out2", name), "rb").read()
            assert a == b

    def test_summary_text_matches_csv(self, tmp_path):
        cfg_path, out = write_fit_inputs(tmp_path)
        run_fit(load_config(cfg_path))
        rows = parse_results_csv(os.path.join(out, "results.csv"))
        text = open(os.path.join(out, "summary.txt")).read()
        for row in rows:
            expected = f"{row['mean']:.3f} ({row['sd']:.3f})"
            line = next(ln for ln in text.splitlines()
                        if ln.startswith(row["parameter"] + " "))
            assert line.endswith(expected)

    def test_model_failure_writes_manifest(self, tmp_path, monkeypatch):
        cfg_path, out = write_fit_inputs(tmp_path)

        def boom(model, **kwargs):
            raise ExplorationFailed("mode search diverged")

        monkeypatch.setattr(engine, "explore_hyperparameters", boom)
        res = run_fit(load_config(cfg_path))
        assert res.exit_code == 1
        assert not os.path.exists(os.path.join(out, "results.csv"))
        manifest = open(os.path.join(out, "errors.jsonl")).read().splitlines()
        assert len(manifest) == 1
        assert '"stage": "fit"' in manifest[0]
        assert '"error": "ExplorationFailed"' in manifest[0]


class TestMiWorkflow:
    def test_pooled_outputs(self, tmp_path):
        cfg = load_config(bundled_config_path("nhanes2_mi.cfg"),
                          overrides={"engine.grid_points": 3, "mi.draws": 4,
                                     "output": str(tmp_path / "mi")})
        res = run_fit(cfg)
        assert res.exit_code == 0
        probs = parse_results_csv(str(tmp_path / "mi" /
                                      "mi_probabilities.csv"))
        strata = {}
        for r in probs:
            strata.setdefault(r["stratum"], 0.0)
            strata[r["stratum"]] += r["probability"]
        assert len(strata) == 3
        for total in strata.values():
            assert abs(total - 1.0) < 1e-9
        pooled = parse_results_csv(str(tmp_path / "mi" / "mi_pooled.csv"))
        names = [r["parameter"] for r in pooled]
        assert "beta.hyp.yes" in names and "bmi.copy" in names

    def test_include_outcome_needs_discrete_response(self, tmp_path):
        cfg_path, _ = write_fit_inputs(
            tmp_path, cfg_text=FIT_CFG + "mi.column = g\nmi.groups = g\n"
                                         "mi.include_outcome = true\n")
        with pytest.raises(ConfigError, match="discrete"):
            run_fit(load_config(cfg_path))


class TestSensitivityWorkflow:
    def test_side_by_side_variants(self, tmp_path):
        cfg_text = FIT_CFG.replace(
            "missingness.variant = MCAR\n",
            "sensitivity.variants = MCAR,MNAR\n")
        cfg_path, out = write_fit_inputs(tmp_path, cfg_text=cfg_text)
        res = run_sensitivity(load_config(cfg_path))
        assert res.exit_code == 0
        rows = parse_results_csv(os.path.join(out, "sensitivity.csv"))
        assert {r["variant"] for r in rows} == {"MCAR", "MNAR"}
        diffs = parse_results_csv(os.path.join(out, "differences.csv"))
        by_name = {r["parameter"]: r["max_abs_diff"] for r in diffs}
        assert by_name["z.copy"] is not None and by_name["z.copy"] >= 0
        # the delta row exists only under MNAR, so no spread is defined
        assert by_name["mnar.delta"] is None
        table = open(os.path.join(out, "sensitivity.txt")).read()
        assert "MCAR" in table and "MNAR" in table

    def test_needs_two_variants(self, tmp_path):
        cfg_text = FIT_CFG.replace(
            "missingness.variant = MCAR\n",
            "sensitivity.variants = MCAR\n")
        cfg_path, _ = write_fit_inputs(tmp_path, cfg_text=cfg_text)
        with pytest.raises(ConfigError, match="two variants"):
            run_sensitivity(load_config(cfg_path))

    def test_mar_needs_columns(self, tmp_path):
        cfg_text = FIT_CFG.replace(
            "missingness.variant = MCAR\n",
            "sensitivity.variants = MAR,MNAR\n")
        cfg_path, _ = write_fit_inputs(tmp_path, cfg_text=cfg_text)
        with pytest.raises(ConfigError, match="missingness.columns"):
            run_sensitivity(load_config(cfg_path))


class TestSimulationWorkflow:
    def test_study_outputs(self, tmp_path):
        cfg_path, out, rep = write_lattice_inputs(
            tmp_path, extra="simulate.proportions = 0.25,0.5\n"
                            "simulate.counties = 3,12\nworkers = 2\n")
        res = run_simulation_study(load_config(cfg_path))
        assert res.exit_code == 0 and not res.errors

        masks = parse_results_csv(os.path.join(out, "masks_mnar.csv"))
        assert len(masks) == rep.n
        p25 = np.array([r["p25"] for r in masks])
        p50 = np.array([r["p50"] for r in masks])
        assert p25.sum() == 4 and p50.sum() == 8
        # nested ladder: every unit missing at 25% is missing at 50%
        assert np.all(p50[p25 == 1] == 1)

        for tag in ("mcar", "mnar"):
            rows = parse_results_csv(
                os.path.join(out, f"simulation_{tag}_model.csv"))
            scenarios = {r["scenario"] for r in rows}
            assert scenarios == {"full", "MCAR25", "MCAR50", "MNAR25",
                                 "MNAR50"}
            assert all(r["status"] == "ok" for r in rows)
        mnar_rows = parse_results_csv(
            os.path.join(out, "simulation_mnar_model.csv"))
        full = [r for r in mnar_rows if r["scenario"] == "full"]
        assert [r["parameter"] for r in full] == ["alpha", "beta.x"]
        assert any(r["parameter"] == "mnar.delta" for r in mnar_rows)

        dens = parse_results_csv(os.path.join(out, "density_county3.csv"))
        # 2 model variants x 2 mechanisms x 2 proportions, one grid each
        assert len({(r["model"], r["mechanism"], r["proportion"])
                    for r in dens}) == 8
        assert all(r["density"] >= 0 for r in dens)

    def test_single_failure_is_recorded_and_run_continues(
            self, tmp_path, monkeypatch):
        cfg_path, out, _ = write_lattice_inputs(
            tmp_path, extra="simulate.proportions = 0.5\n")
        original = engine.explore_hyperparameters
        calls = []

        def flaky(model, **kwargs):
            calls.append(1)
            if len(calls) == 2:
                raise ExplorationFailed("grid collapsed")
            return original(model, **kwargs)

        monkeypatch.setattr(engine, "explore_hyperparameters", flaky)
        res = run_simulation_study(load_config(cfg_path))
        assert res.exit_code == 1
        assert len(res.errors) == 1 and res.errors[0]["scenario"] == "MCAR50"
        mcar_rows = parse_results_csv(
            os.path.join(out, "simulation_mcar_model.csv"))
        failed = [r for r in mcar_rows if r["status"] == "failed"]
        assert len(failed) == 1 and failed[0]["scenario"] == "MCAR50"
        # the other cells and the full fit still produced rows
        assert any(r["scenario"] == "full" and r["status"] == "ok"
                   for r in mcar_rows)
        table = open(os.path.join(out,
                                  "simulation_mcar_model.txt")).read()
        assert "failed" in table
        manifest = open(os.path.join(out, "errors.jsonl")).read()
        assert '"scenario": "MCAR50"' in manifest


class TestReportWorkflow:
    def test_rerenders_fit_results(self, tmp_path, capsys):
        cfg_path, out = write_fit_inputs(tmp_path)
        run_fit(load_config(cfg_path))
        assert run_report(out) == 0
        printed = capsys.readouterr().out
        assert "== Analysis ==" in printed
        assert "results.csv" in printed

    def test_empty_directory_errors(self, tmp_path):
        with pytest.raises(ParseError, match="no renderable"):
            run_report(str(tmp_path))


class TestCli:
    def test_fit_roundtrip_deterministic(self, tmp_path, capsys):
        cfg_path, out1 = write_fit_inputs(tmp_path, out_name="out1")
        assert main(["fit", cfg_path]) == 0
        assert main(["fit", cfg_path, "--output",
                     str(tmp_path / "out2"), "--workers", "2"]) == 0
        a = open(os.path.join(out1, "results.csv"), "rb").read()
        b = open(str(tmp_path / "out2" / "results.csv"), "rb").read()
        assert a == b
        assert main(["report", out1]) == 0
        assert "== Analysis ==" in capsys.readouterr().out

    def test_bad_config_exits_two(self, tmp_path, capsys):
        p = tmp_path / "bad.cfg"
        p.write_text("dataset = d.csv\nresponse = y\nbogus = 1\n")
        assert main(["fit", str(p)]) == 2
        assert "unknown keys" in capsys.readouterr().err

    def test_parse_error_exits_two(self, tmp_path, capsys):
        (tmp_path / "d.csv").write_text("a,b\n1,2\n3\n")
        p = tmp_path / "run.cfg"
        p.write_text("dataset = d.csv\nresponse = a\n")
        assert main(["fit", str(p)]) == 2
        assert "row 3" in capsys.readouterr().err

    def test_seed_flag_changes_hash(self, tmp_path):
        cfg_path, _ = write_fit_inputs(tmp_path)
        base = load_config(cfg_path)
        seeded = load_config(cfg_path, overrides={"seed": 3})
        assert base.sha256() != seeded.sha256()

    def test_transform_flag_targets_ratio_effects(self, tmp_path):
        cfg_path, _, _ = write_lattice_inputs(
            tmp_path, extra="simulate.proportions = 0.5\n")
        overrides = _transform_overrides(cfg_path, "logit")
        assert overrides == {"effect.x.transform": "logit"}
        with_flag = load_config(cfg_path, overrides=overrides)
        assert with_flag.effects[0].transform == "logit"
        assert with_flag.sha256() != load_config(cfg_path).sha256()

    def test_transform_flag_needs_ratio_effect(self, tmp_path):
        cfg_path, _ = write_fit_inputs(tmp_path)
        with pytest.raises(ConfigError, match="ratio"):
            _transform_overrides(cfg_path, "logit")
