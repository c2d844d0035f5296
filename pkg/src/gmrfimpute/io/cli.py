"""Command-line entry points: fit, simulate, sensitivity, and report.

Exit status follows the workflows: 0 when every model converged, 1 when
any fit failed (the output directory then carries errors.jsonl), 2 for
configuration and parse problems.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError, GmrfImputeError, ParseError
from ..sids import COVARIATE_TRANSFORMS
from .config import load_config, parse_config_text
from .workflows import (
    run_fit,
    run_report,
    run_sensitivity,
    run_simulation_study,
)

WORKFLOWS = {
    "fit": run_fit,
    "simulate": run_simulation_study,
    "sensitivity": run_sensitivity,
}


def _add_run_arguments(parser):
    parser.add_argument("config", help="run configuration file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the run seed")
    parser.add_argument("--grid-points", type=int, default=None,
                        help="hyperparameter grid points per dimension")
    parser.add_argument("--pinning-precision", type=float, default=None,
                        help="precision pinning observed latent entries")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker threads for parallel fits")
    parser.add_argument("--mi-draws", type=int, default=None,
                        help="completed datasets for the categorical pooling")
    parser.add_argument("--output", default=None,
                        help="output directory for result files")
    parser.add_argument("--covariate-transform", default=None,
                        choices=COVARIATE_TRANSFORMS,
                        help="transform applied to ratio covariates")


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.grid_points is not None:
        out["engine.grid_points"] = args.grid_points
    if args.pinning_precision is not None:
        out["engine.pinning_precision"] = args.pinning_precision
    if args.workers is not None:
        out["workers"] = args.workers
    if args.mi_draws is not None:
        out["mi.draws"] = args.mi_draws
    if args.output is not None:
        out["output"] = args.output
    if args.covariate_transform is not None:
        out.update(_transform_overrides(args.config,
                                        args.covariate_transform))
    return out


def _transform_overrides(config_path, transform) -> dict:
    """Point every ratio effect's transform key at the requested kind."""
    try:
        with open(config_path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
    entries = parse_config_text(text, source=config_path)
    out = {}
    for key in entries:
        if key.startswith("effect.") and key.endswith(".numerator"):
            name = key[len("effect."):-len(".numerator")]
            out[f"effect.{name}.transform"] = transform
    if not out:
        raise ConfigError("--covariate-transform needs an effect with a "
                          "ratio covariate (numerator/denominator)")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmrfimpute",
        description="Joint Bayesian analysis with imputed covariates: "
                    "single fits, missingness sensitivity, and masking "
                    "simulation studies.")
    sub = parser.add_subparsers(dest="command", required=True)
    fit = sub.add_parser("fit", help="fit one configured model")
    _add_run_arguments(fit)
    sim = sub.add_parser("simulate",
                         help="run the masking simulation study")
    _add_run_arguments(sim)
    sens = sub.add_parser("sensitivity",
                          help="fit several missingness variants side by side")
    _add_run_arguments(sens)
    rep = sub.add_parser("report", help="re-render result tables from CSVs")
    rep.add_argument("results_dir", help="directory holding result CSVs")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            return run_report(args.results_dir)
        cfg = load_config(args.config, overrides=_overrides(args))
        result = WORKFLOWS[args.command](cfg)
        for entry in result.errors:
            print(f"error [{entry['stage']}]: {entry['message']}",
                  file=sys.stderr)
        return result.exit_code
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GmrfImputeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
