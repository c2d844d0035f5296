"""Run configuration: flat key=value text with dotted section keys.

Blank lines and lines starting with '#' are ignored. Every key is
consumed by a known field; unknown keys are hard errors so typos cannot
silently change a study. Imputation effects are declared in groups of
dotted keys sharing a name, e.g.

    effect.bmi.kind = linreg
    effect.bmi.covariate = bmi
    effect.bmi.design = age

Ratio covariates (count numerator over count denominator, as in the
lattice study) replace the covariate key with numerator, denominator,
and transform keys. The config hash written into output headers is the
SHA-256 of the effective canonical key=value text, so command-line
overrides produce distinguishable provenance lines.
"""

from __future__ import annotations

import hashlib
import os

from ..errors import ConfigError
from ..missingness import MECHANISMS
from ..sids import COVARIATE_TRANSFORMS

FAMILIES = ("gaussian", "poisson", "bernoulli")
EFFECT_KINDS = ("linreg", "car")


def parse_config_text(text: str, source="<memory>") -> dict:
    """Key=value lines to an ordered dict; duplicates are errors."""
    out = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source}: line {line_no}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}: line {line_no}: empty key")
        if key in out:
            raise ConfigError(f"{source}: line {line_no}: duplicate key {key!r}")
        out[key] = value
    return out


def _to_bool(key, value):
    if value in ("true", "false"):
        return value == "true"
    raise ConfigError(f"{key} must be 'true' or 'false', got {value!r}")


def _to_int(key, value):
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}") from None


def _to_float(key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {value!r}") from None


def _split_list(value):
    items = [v.strip() for v in value.split(",")]
    return [v for v in items if v]


class EffectConfig:
    """One declared imputation effect."""

    __slots__ = ("name", "kind", "covariate", "numerator", "denominator",
                 "transform", "design_cols")

    def __init__(self, name, kind, covariate=None, numerator=None,
                 denominator=None, transform="logit-std", design_cols=()):
        if kind not in EFFECT_KINDS:
            raise ConfigError(f"effect.{name}.kind must be one of "
                              f"{EFFECT_KINDS}, got {kind!r}")
        if (covariate is None) == (numerator is None):
            raise ConfigError(
                f"effect.{name} needs either a covariate key or a "
                "numerator/denominator pair, not both or neither")
        if (numerator is None) != (denominator is None):
            raise ConfigError(
                f"effect.{name} numerator and denominator come together")
        if transform not in COVARIATE_TRANSFORMS:
            raise ConfigError(f"effect.{name}.transform must be one of "
                              f"{COVARIATE_TRANSFORMS}, got {transform!r}")
        self.name = name
        self.kind = kind
        self.covariate = covariate
        self.numerator = numerator
        self.denominator = denominator
        self.transform = transform
        self.design_cols = tuple(design_cols)


class RunConfig:
    """Validated run settings; see the module docstring for the key list."""

    def __init__(self, entries: dict, base_dir=".", source="<memory>"):
        self.source = source
        self.base_dir = str(base_dir)
        pending = dict(entries)

        def take(key, default=None):
            return pending.pop(key, default)

        dataset = take("dataset")
        if not dataset:
            raise ConfigError(f"{source}: dataset is required")
        self.dataset = dataset
        self.adjacency = take("adjacency")
        self.output = take("output", "results")
        self.seed = _to_int("seed", take("seed", "0"))
        self.workers = _to_int("workers", take("workers", "1"))
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

        self.grid_points = _to_int("engine.grid_points",
                                   take("engine.grid_points", "5"))
        if self.grid_points < 3 or self.grid_points % 2 == 0:
            raise ConfigError("engine.grid_points must be odd and >= 3")
        self.pinning_precision = _to_float("engine.pinning_precision",
                                           take("engine.pinning_precision",
                                                "1e10"))
        if self.pinning_precision <= 0:
            raise ConfigError("engine.pinning_precision must be positive")

        response = take("response")
        if not response:
            raise ConfigError(f"{source}: response is required")
        self.response = response
        self.family = take("response.family", "gaussian")
        if self.family not in FAMILIES:
            raise ConfigError(f"response.family must be one of {FAMILIES}, "
                              f"got {self.family!r}")
        self.standardize_response = _to_bool(
            "response.standardize", take("response.standardize", "false"))
        self.offset = take("offset")
        self.offset_log = _to_bool("offset.log", take("offset.log", "true"))
        self.fixed_columns = tuple(_split_list(take("fixed", "")))
        self.fixed_intercept = _to_bool("fixed.intercept",
                                        take("fixed.intercept", "true"))

        # effect groups: collect every effect.<name>.<field> key
        effect_fields = {}
        for key in list(pending):
            parts = key.split(".")
            if parts[0] == "effect" and len(parts) == 3:
                effect_fields.setdefault(parts[1], {})[parts[2]] = pending.pop(key)
            elif parts[0] == "effect":
                raise ConfigError(f"{source}: malformed effect key {key!r}")
        self.effects = []
        for name, fields in effect_fields.items():
            kind = fields.pop("kind", None)
            if kind is None:
                raise ConfigError(f"effect.{name}.kind is required")
            eff = EffectConfig(
                name, kind,
                covariate=fields.pop("covariate", None),
                numerator=fields.pop("numerator", None),
                denominator=fields.pop("denominator", None),
                transform=fields.pop("transform", "logit-std"),
                design_cols=_split_list(fields.pop("design", "")))
            if fields:
                raise ConfigError(
                    f"unknown effect.{name} keys: {sorted(fields)}")
            if eff.kind == "car" and self.adjacency is None:
                raise ConfigError(f"effect.{name} is a car effect and needs "
                                  "an adjacency file")
            self.effects.append(eff)

        self.missingness_variant = take("missingness.variant")
        if self.missingness_variant is not None:
            if self.missingness_variant not in MECHANISMS:
                raise ConfigError(f"missingness.variant must be one of "
                                  f"{MECHANISMS}, got "
                                  f"{self.missingness_variant!r}")
            if not self.effects:
                raise ConfigError(
                    "missingness.variant needs an imputation effect")
        self.missingness_of = take("missingness.of")
        if self.missingness_of is None and self.effects:
            if len(self.effects) == 1:
                self.missingness_of = self.effects[0].name
            elif self.missingness_variant is not None:
                raise ConfigError("missingness.of must name the effect when "
                                  "several are declared")
        if (self.missingness_of is not None and self.effects
                and self.missingness_of not in [e.name for e in self.effects]):
            raise ConfigError(f"missingness.of names no declared effect: "
                              f"{self.missingness_of!r}")
        self.missingness_columns = tuple(
            _split_list(take("missingness.columns", "")))

        props = _split_list(take("simulate.proportions", ""))
        self.simulate_proportions = tuple(
            _to_float("simulate.proportions", p) for p in props)
        mechs = tuple(_split_list(take("simulate.mechanisms", "")))
        for m in mechs:
            if m not in MECHANISMS:
                raise ConfigError(f"simulate.mechanisms entries must be in "
                                  f"{MECHANISMS}, got {m!r}")
        self.simulate_mechanisms = mechs
        self.simulate_mnar_slope = _to_float(
            "simulate.mnar_slope", take("simulate.mnar_slope", "5.0"))
        self.simulate_mnar_intercept = _to_float(
            "simulate.mnar_intercept", take("simulate.mnar_intercept", "0.0"))
        self.simulate_counties = tuple(
            _to_int("simulate.counties", c)
            for c in _split_list(take("simulate.counties", "")))

        self.sensitivity_variants = tuple(
            _split_list(take("sensitivity.variants", "")))
        for v in self.sensitivity_variants:
            if v not in MECHANISMS:
                raise ConfigError(f"sensitivity.variants entries must be in "
                                  f"{MECHANISMS}, got {v!r}")

        self.mi_column = take("mi.column")
        self.mi_groups = tuple(_split_list(take("mi.groups", "")))
        self.mi_draws = _to_int("mi.draws", take("mi.draws", "100"))
        if self.mi_draws < 1:
            raise ConfigError("mi.draws must be at least 1")
        self.mi_include_outcome = _to_bool(
            "mi.include_outcome", take("mi.include_outcome", "false"))
        if self.mi_column is not None and not self.mi_groups:
            raise ConfigError("mi.column needs mi.groups to stratify on")

        if pending:
            raise ConfigError(
                f"{source}: unknown keys: {sorted(pending)}")
        if self.response in self.fixed_columns:
            raise ConfigError("the response cannot also be a fixed column")
        for eff in self.effects:
            if eff.covariate == self.response:
                raise ConfigError("the response cannot also be an "
                                  "imputation covariate")

    def effective_text(self) -> str:
        """Canonical key=value rendering of every setting that shapes the
        results. Where results are written and how many workers computed
        them are excluded, so the hash identifies the statistical run."""
        pairs = [
            ("dataset", self.dataset),
            ("adjacency", self.adjacency),
            ("seed", self.seed),
            ("engine.grid_points", self.grid_points),
            ("engine.pinning_precision", self.pinning_precision),
            ("response", self.response),
            ("response.family", self.family),
            ("response.standardize", str(self.standardize_response).lower()),
            ("offset", self.offset),
            ("offset.log", str(self.offset_log).lower()),
            ("fixed", ",".join(self.fixed_columns)),
            ("fixed.intercept", str(self.fixed_intercept).lower()),
            ("missingness.variant", self.missingness_variant),
            ("missingness.of", self.missingness_of),
            ("missingness.columns", ",".join(self.missingness_columns)),
            ("simulate.proportions",
             ",".join(f"{p:g}" for p in self.simulate_proportions)),
            ("simulate.mechanisms", ",".join(self.simulate_mechanisms)),
            ("simulate.mnar_slope", self.simulate_mnar_slope),
            ("simulate.mnar_intercept", self.simulate_mnar_intercept),
            ("simulate.counties",
             ",".join(str(c) for c in self.simulate_counties)),
            ("sensitivity.variants", ",".join(self.sensitivity_variants)),
            ("mi.column", self.mi_column),
            ("mi.groups", ",".join(self.mi_groups)),
            ("mi.draws", self.mi_draws),
            ("mi.include_outcome", str(self.mi_include_outcome).lower()),
        ]
        for eff in self.effects:
            pairs.append((f"effect.{eff.name}.kind", eff.kind))
            pairs.append((f"effect.{eff.name}.covariate", eff.covariate))
            pairs.append((f"effect.{eff.name}.numerator", eff.numerator))
            pairs.append((f"effect.{eff.name}.denominator", eff.denominator))
            pairs.append((f"effect.{eff.name}.transform", eff.transform))
            pairs.append((f"effect.{eff.name}.design",
                          ",".join(eff.design_cols)))
        lines = [f"{k}={v}" for k, v in sorted(pairs) if v not in (None, "")]
        return "\n".join(lines) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.effective_text().encode()).hexdigest()


def load_config(path, overrides=None) -> RunConfig:
    """Read a config file; overrides is an optional key->value dict."""
    path = str(path)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    entries = parse_config_text(text, source=path)
    for key, value in (overrides or {}).items():
        entries[key] = str(value)
    return RunConfig(entries, base_dir=os.path.dirname(path) or ".",
                     source=path)
