"""Run configuration (TOML).

Relative data paths resolve against the directory holding the config file.
Unknown sections or keys are rejected so that a typo cannot silently fall
back to a default. See ``data/main_spec.toml`` for an annotated example.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from .analysis import SD_BASIS_MODES
from .errors import ConfigError
from .panel import NAPLAN_OUTCOMES
from .pool import DonorFilterSpec
from .scm import Estimator, ScmSettings
from .simgen import DgpSpec

__all__ = ["RunConfig", "load_config", "write_config"]

_SCHEMA: dict[str, set[str] | None] = {
    "seed": None,
    "data": {"schools", "attributes", "income", "exclude_years"},
    "design": {"treated", "treatment_year", "outcomes", "covariates"},
    "donors": {"equals", "ranges"},
    "estimator": {"name", "v_max_evals", "v_start_logit", "chern_bound", "hsiao_max_regressors"},
    "inference": {"alpha", "estimator"},
    "analysis": {"sd_basis", "strict_offset", "loo_k", "sensitivity", "percentile_population"},
    "output": {"dir"},
    "simulate": {"n_units", "years", "gap_years", "treatment_year", "outcomes", "n_factors",
                 "loading_scale", "unit_effect_scale", "noise_sd", "treated", "hull_size",
                 "effect", "effect_scale", "covariates", "out"},
}

DEFAULT_COVARIATES = (
    "attendance", "fte_enrolments", "icsea", "postcode-mean-income", "female_share",
    "class_size", "lbote_pct", "radial-distance-km", "first_teacher_year",
)


def _get(section: Mapping, key: str, kind, default=None, where: str = ""):
    if key not in section:
        return default
    value = section[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ConfigError(f"{where}{key} must be {name}, got {type(value).__name__}")
    return value


def _str_list(section, key, default, where) -> tuple[str, ...]:
    value = _get(section, key, list, None, where)
    if value is None:
        return tuple(default)
    if not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{where}{key} must be a list of strings")
    return tuple(value)


def _int_list(section, key, default, where) -> tuple[int, ...]:
    value = _get(section, key, list, None, where)
    if value is None:
        return tuple(default)
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise ConfigError(f"{where}{key} must be a list of integers")
    return tuple(value)


@dataclass(frozen=True)
class RunConfig:
    path: Path | None
    raw: Mapping[str, Any]
    seed: int = 0
    schools: Path | None = None
    attributes: Path | None = None
    income: Path | None = None
    exclude_years: tuple[int, ...] = ()
    treated: str | None = None
    treatment_year: int | None = None
    outcomes: tuple[str, ...] = NAPLAN_OUTCOMES
    covariates: tuple[str, ...] = DEFAULT_COVARIATES
    donor_filter: DonorFilterSpec | None = None
    estimator: Estimator = Estimator.ABADIE_NESTED
    settings: ScmSettings = field(default_factory=ScmSettings)
    alpha: float = 0.05
    placebo_estimator: Estimator = Estimator.ABADIE_NESTED
    sd_basis: str = "donor-pre-pooled"
    strict_offset: int = 3
    loo_k: int = 8
    sensitivity: tuple[Estimator, ...] = (
        Estimator.ABADIE_NOCOV, Estimator.FERMAN, Estimator.HSIAO, Estimator.CHERN)
    percentile_population: str = "pool"
    output_dir: Path = Path("out")
    simulate: DgpSpec | None = None
    simulate_out: Path | None = None

    @property
    def base_dir(self) -> Path:
        return self.path.parent if self.path is not None else Path.cwd()

    def require_data(self) -> None:
        """Check the sections needed by the estimation commands."""
        missing = [name for name, v in (("data.schools", self.schools), ("design.treated", self.treated),
                                        ("design.treatment_year", self.treatment_year)) if v is None]
        if missing:
            raise ConfigError(f"config lacks required keys: {', '.join(missing)}")
        for p in (self.schools, self.attributes, self.income):
            if p is not None and not p.is_file():
                raise ConfigError(f"data file not found: {p}")

    def fingerprint(self) -> str:
        """SHA-256 over the config content (minus output location), the seed,
        and the bytes of every referenced data file."""
        raw = copy.deepcopy(dict(self.raw))
        raw.pop("output", None)
        raw["seed"] = self.seed
        h = hashlib.sha256(json.dumps(raw, sort_keys=True, default=str).encode())
        for p in (self.schools, self.attributes, self.income):
            if p is not None and p.is_file():
                h.update(hashlib.sha256(p.read_bytes()).digest())
        return h.hexdigest()


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def _check_keys(raw: Mapping) -> None:
    for key, value in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config section {key!r}")
        allowed = _SCHEMA[key]
        if allowed is None:
            continue
        if not isinstance(value, Mapping):
            raise ConfigError(f"[{key}] must be a table")
        extra = sorted(set(value) - allowed)
        if extra:
            raise ConfigError(f"unknown key(s) in [{key}]: {', '.join(extra)}")


def _parse_simulate(sim: Mapping) -> DgpSpec:
    w = "simulate."
    base = DgpSpec()
    effect = _get(sim, "effect", dict, {}, w)
    scale = _get(sim, "effect_scale", dict, {}, w)
    try:
        effect = {int(k): float(v) for k, v in effect.items()}
        scale = {str(k): float(v) for k, v in scale.items()}
    except (TypeError, ValueError) as err:
        raise ConfigError(f"simulate.effect / effect_scale must map to numbers: {err}") from None
    try:
        return DgpSpec(
            n_units=_get(sim, "n_units", int, base.n_units, w),
            years=_int_list(sim, "years", base.years, w),
            gap_years=_int_list(sim, "gap_years", base.gap_years, w),
            treatment_year=_get(sim, "treatment_year", int, base.treatment_year, w),
            outcome_keys=_str_list(sim, "outcomes", base.outcome_keys, w),
            n_factors=_get(sim, "n_factors", int, base.n_factors, w),
            loading_scale=_get(sim, "loading_scale", float, base.loading_scale, w),
            unit_effect_scale=_get(sim, "unit_effect_scale", float, base.unit_effect_scale, w),
            noise_sd=_get(sim, "noise_sd", float, base.noise_sd, w),
            treated_id=_get(sim, "treated", str, base.treated_id, w),
            hull_size=_get(sim, "hull_size", int, base.hull_size, w),
            effect=effect,
            effect_scale=scale,
            covariates=_get(sim, "covariates", bool, base.covariates, w),
            seed=0,
        )
    except ValueError as err:
        raise ConfigError(f"invalid [simulate] section: {err}") from None


def parse_config(raw: Mapping[str, Any], path: Path | None = None, seed: int | None = None) -> RunConfig:
    _check_keys(raw)
    base = path.parent if path is not None else Path.cwd()
    data = raw.get("data", {})
    design = raw.get("design", {})
    donors = raw.get("donors", {})
    est = raw.get("estimator", {})
    inf = raw.get("inference", {})
    ana = raw.get("analysis", {})
    out = raw.get("output", {})

    cfg_seed = _get(raw, "seed", int, 0)
    seed = cfg_seed if seed is None else seed
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")

    treated = _get(design, "treated", str, None, "design.")
    equals = _get(donors, "equals", dict, {}, "donors.")
    ranges = _get(donors, "ranges", dict, {}, "donors.")
    for k, v in ranges.items():
        if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v)):
            raise ConfigError(f"donors.ranges.{k} must be [low, high]")
        if v[0] > v[1]:
            raise ConfigError(f"donors.ranges.{k}: low exceeds high")
    donor_filter = None
    if treated is not None:
        donor_filter = DonorFilterSpec(treated, tuple(equals.items()),
                                       tuple((k, v[0], v[1]) for k, v in ranges.items()))

    try:
        estimator = Estimator.parse(_get(est, "name", str, "AbadieNested", "estimator."))
        placebo_est = Estimator.parse(_get(inf, "estimator", str, estimator.value, "inference."))
        sens = tuple(Estimator.parse(e) for e in _str_list(
            ana, "sensitivity", ("AbadieNoCov", "FermanDemeaned", "HsiaoOls", "ChernL1"), "analysis."))
    except ValueError as err:
        raise ConfigError(str(err)) from None

    hsiao = _get(est, "hsiao_max_regressors", int, None, "estimator.")
    settings = ScmSettings(
        v_max_evals=_get(est, "v_max_evals", int, 2000, "estimator."),
        v_start_logit=_get(est, "v_start_logit", float, 3.0, "estimator."),
        hsiao_max_regressors=hsiao,
        chern_bound=_get(est, "chern_bound", float, 1.0, "estimator."),
    )
    if settings.v_max_evals < 1:
        raise ConfigError("estimator.v_max_evals must be positive")
    if not settings.chern_bound > 0:
        raise ConfigError("estimator.chern_bound must be positive")

    alpha = _get(inf, "alpha", float, 0.05, "inference.")
    if not 0.0 < alpha < 1.0:
        raise ConfigError("inference.alpha must lie strictly between 0 and 1")
    sd_mode = _get(ana, "sd_basis", str, "donor-pre-pooled", "analysis.")
    if sd_mode not in SD_BASIS_MODES:
        raise ConfigError(f"analysis.sd_basis must be one of {', '.join(SD_BASIS_MODES)}")
    population = _get(ana, "percentile_population", str, "pool", "analysis.")
    if population not in ("pool", "panel"):
        raise ConfigError("analysis.percentile_population must be 'pool' or 'panel'")
    loo_k = _get(ana, "loo_k", int, 8, "analysis.")
    if loo_k < 1:
        raise ConfigError("analysis.loo_k must be positive")

    sim = raw.get("simulate")
    spec = None
    sim_out = None
    if sim is not None:
        spec = replace(_parse_simulate(sim), seed=seed)
        sim_out = _resolve(base, _get(sim, "out", str, "simulated", "simulate."))

    return RunConfig(
        path=path,
        raw=raw,
        seed=seed,
        schools=_resolve(base, _get(data, "schools", str, None, "data.")),
        attributes=_resolve(base, _get(data, "attributes", str, None, "data.")),
        income=_resolve(base, _get(data, "income", str, None, "data.")),
        exclude_years=_int_list(data, "exclude_years", (), "data."),
        treated=treated,
        treatment_year=_get(design, "treatment_year", int, None, "design."),
        outcomes=_str_list(design, "outcomes", NAPLAN_OUTCOMES, "design."),
        covariates=_str_list(design, "covariates", DEFAULT_COVARIATES, "design."),
        donor_filter=donor_filter,
        estimator=estimator,
        settings=settings,
        alpha=alpha,
        placebo_estimator=placebo_est,
        sd_basis=sd_mode,
        strict_offset=_get(ana, "strict_offset", int, 3, "analysis."),
        loo_k=loo_k,
        sensitivity=sens,
        percentile_population=population,
        output_dir=_resolve(base, _get(out, "dir", str, "out", "output.")),
        simulate=spec,
        simulate_out=sim_out,
    )


def load_config(path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    return parse_config(raw, path.resolve(), seed)


def write_config(raw: Mapping[str, Any], path) -> None:
    Path(path).write_bytes(tomli_w.dumps(dict(raw)).encode("utf-8"))
