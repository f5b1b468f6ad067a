"""Known-counterfactual panel generator.

Outcomes follow a linear factor model::

    Y[o, i, t] = level[o] + a[i] + loadings[i] . factors[o, t] + noise

The treated unit's unit effect and loadings are a convex combination of a few
donors (so the counterfactual lies inside the donor hull), and its post-period
outcomes carry an additive effect path. The untreated counterfactual is
returned separately and never written into the panel files.

Randomness comes from a single ``numpy.random.Generator`` over the PCG64 bit
generator seeded with ``DgpSpec.seed``; draws happen in a fixed order, so the
same spec always yields byte-identical files.
"""

from __future__ import annotations

import csv
from collections.abc import Mapping
from importlib import resources
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .panel import (
    INCOME_KEY,
    NAPLAN_OUTCOMES,
    CovariateKind,
    CovariateSeries,
    IncomeTable,
    PanelDataset,
    UnitRecord,
    write_income,
    write_panel,
)

__all__ = ["FIXTURE_SPEC", "DgpSpec", "Truth", "bundled_path", "generate", "load_truth", "write_dataset"]

_LEVELS = {"reading_y3": 420.0, "reading_y5": 500.0, "numeracy_y3": 400.0, "numeracy_y5": 490.0}


@dataclass(frozen=True)
class DgpSpec:
    n_units: int = 109
    years: tuple[int, ...] = tuple(range(2010, 2022))
    gap_years: tuple[int, ...] = (2020,)
    treatment_year: int = 2014
    outcome_keys: tuple[str, ...] = NAPLAN_OUTCOMES
    n_factors: int = 2
    loading_scale: float = 12.0
    unit_effect_scale: float = 20.0
    noise_sd: float = 5.0
    treated_id: str = "S000"
    hull_size: int = 4          # 0: the treated unit is drawn like every other unit
    effect: Mapping[int, float] = field(default_factory=dict)   # year -> points
    effect_scale: Mapping[str, float] = field(default_factory=dict)  # outcome -> multiplier
    covariates: bool = True
    seed: int = 2014

    def __post_init__(self):
        if self.n_units < 2:
            raise ValueError("need a treated unit and at least one donor")
        if not 0 <= self.hull_size < self.n_units:
            raise ValueError("hull_size must lie in [0, n_units)")
        object.__setattr__(self, "effect", {int(k): float(v) for k, v in dict(self.effect).items()})
        object.__setattr__(self, "effect_scale", dict(self.effect_scale))

    @property
    def periods(self) -> tuple[int, ...]:
        gaps = set(self.gap_years)
        return tuple(y for y in self.years if y not in gaps)

    def unit_ids(self) -> list[str]:
        width = max(3, len(str(self.n_units - 1)))
        return [self.treated_id] + [f"S{i:0{width}d}" for i in range(1, self.n_units)]


# Shape of the bundled fixture: 109 schools, 2010-2021 without 2020, treatment
# in 2014, treated unit mixed from eight donors, effect growing to ~80 points.
FIXTURE_SPEC = DgpSpec(
    hull_size=8,
    seed=2014,
    effect={2014: 10.0, 2015: 20.0, 2016: 40.0, 2017: 70.0, 2018: 75.0, 2019: 80.0, 2021: 80.0},
    effect_scale={"numeracy_y3": 1.0, "numeracy_y5": 0.45, "reading_y3": 1.15, "reading_y5": 0.55},
)


def bundled_path(name: str = "") -> Path:
    """Path of a file shipped in the package ``data`` directory."""
    return Path(str(resources.files("synthcontrol") / "data")) / name


@dataclass(frozen=True, eq=False)
class Truth:
    treated: str
    periods: tuple[int, ...]
    counterfactual: Mapping[str, np.ndarray]   # outcome -> (periods,)
    effect: Mapping[str, np.ndarray]           # outcome -> (periods,)
    hull_weights: Mapping[str, float]

    def att(self, outcome: str, years) -> float:
        pos = [self.periods.index(y) for y in years]
        return float(np.mean(self.effect[outcome][pos]))


def generate(spec: DgpSpec) -> tuple[PanelDataset, Truth]:
    """Draw a panel from ``spec``; returns it with the treated unit's truth."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    periods = spec.periods
    n, t, f = spec.n_units, len(periods), spec.n_factors
    ids = spec.unit_ids()

    unit_effect = rng.normal(0.0, spec.unit_effect_scale, n)
    loadings = rng.normal(0.0, 1.0, (n, f))
    hull = np.arange(1, spec.hull_size + 1)
    hull_w = rng.dirichlet(np.ones(spec.hull_size)) if spec.hull_size else np.zeros(0)
    if spec.hull_size:
        unit_effect[0] = hull_w @ unit_effect[hull]
        loadings[0] = hull_w @ loadings[hull]

    outcomes = {}
    counterfactual = {}
    effects = {}
    for key in spec.outcome_keys:
        factors = rng.normal(0.0, spec.loading_scale, (f, t))
        noise = rng.normal(0.0, 1.0, (n, t)) * spec.noise_sd
        level = _LEVELS.get(key, 450.0)
        signal = level + unit_effect[:, None] + loadings @ factors
        y = signal + noise
        effect = np.array([spec.effect.get(p, 0.0) for p in periods]) * spec.effect_scale.get(key, 1.0)
        effect[np.array(periods) < spec.treatment_year] = 0.0
        counterfactual[key] = y[0].copy()
        effects[key] = effect
        y[0] = y[0] + effect
        outcomes[key] = np.round(y, 6)
        counterfactual[key] = np.round(counterfactual[key], 6)

    units, covariates = _school_covariates(rng, spec, ids, loadings, hull, hull_w, t)
    truth = Truth(
        ids[0], periods, counterfactual, effects,
        {ids[h]: float(w) for h, w in zip(hull, hull_w)},
    )
    return PanelDataset(tuple(units), periods, outcomes, covariates), truth


def _school_covariates(rng, spec: DgpSpec, ids, loadings, hull, hull_w, t):
    n = spec.n_units
    if not spec.covariates:
        return [UnitRecord(u, f"Synthetic school {u}") for u in ids], {}

    # static attributes; the treated unit mirrors its hull donors
    lat = -32.95 + rng.normal(0.0, 0.35, n)
    lon = 151.55 + rng.normal(0.0, 0.25, n)
    near = rng.normal(0.0, 0.03, (spec.hull_size, 2))
    lat[hull] = lat[0] + near[:, 0]
    lon[hull] = lon[0] + near[:, 1]
    mixed = spec.hull_size > 0
    n_postcodes = max(2, int(0.6 * n))
    postcode_of = 2000 + rng.integers(0, 400, n_postcodes) * 2
    postcodes = postcode_of[rng.integers(0, n_postcodes, n)]
    lbote = np.round(rng.uniform(10.0, 15.0, n), 2)
    if mixed:
        lbote[0] = np.round(hull_w @ lbote[hull], 2)
    first_teacher = rng.integers(1860, 2000, n).astype(float)
    if mixed:
        first_teacher[0] = np.round(hull_w @ first_teacher[hull], 2)

    units = []
    for i, uid in enumerate(ids):
        units.append(UnitRecord(uid, "Treated school" if i == 0 else f"Donor school {uid}", {
            "latitude": round(float(lat[i]), 6),
            "longitude": round(float(lon[i]), 6),
            "postcode": str(postcodes[i]),
            "remoteness": "Major Cities of Australia",
            "coeducational": True,
            "grade_span": "K-6",
            "lbote_pct": float(lbote[i]),
            "first_teacher_year": float(first_teacher[i]),
        }))

    def panel_series(base, unit_sd, drift_sd, load_coef=0.0, decimals=4):
        unit_level = base + rng.normal(0.0, unit_sd, n) + load_coef * loadings[:, 0]
        values = unit_level[:, None] + rng.normal(0.0, drift_sd, (n, t))
        if mixed:
            values[0] = hull_w @ values[hull]
        return np.round(values, decimals)

    covariates = {
        "latitude": CovariateSeries.fixed([u.attributes["latitude"] for u in units]),
        "longitude": CovariateSeries.fixed([u.attributes["longitude"] for u in units]),
        "lbote_pct": CovariateSeries.fixed(lbote),
        "first_teacher_year": CovariateSeries.fixed(first_teacher),
        "attendance": CovariateSeries.time_varying(panel_series(0.93, 0.015, 0.005, 0.004)),
        "fte_enrolments": CovariateSeries.time_varying(panel_series(260.0, 90.0, 12.0, 0.0, 2)),
        "female_share": CovariateSeries.time_varying(panel_series(0.48, 0.025, 0.01)),
        "icsea": CovariateSeries.time_varying(panel_series(1040.0, 35.0, 4.0, 25.0, 1)),
        "class_size": CovariateSeries.time_varying(panel_series(24.0, 1.5, 0.6, 0.0, 2)),
    }

    # postcode income: one series per postcode, shared by co-located schools
    distinct = sorted(set(str(p) for p in postcodes))
    base = rng.normal(68000.0, 9000.0, len(distinct))
    growth = rng.normal(0.025, 0.006, len(distinct))
    years = np.array(spec.periods, dtype=float) - spec.periods[0]
    income_by_pc = {
        pc: np.round(b * (1.0 + g) ** years + rng.normal(0.0, 600.0, t), 2)
        for pc, b, g in zip(distinct, base, growth)
    }
    income = np.array([income_by_pc[str(p)] for p in postcodes])
    covariates[INCOME_KEY] = CovariateSeries.time_varying(income)
    return units, covariates


def income_table(panel: PanelDataset) -> IncomeTable:
    """Recover the postcode-level income table from a panel's income covariate."""
    series = panel.covariate(INCOME_KEY)
    rows: dict[tuple[str, int], float] = {}
    mask = np.ma.getmaskarray(series.values)
    for i, unit in enumerate(panel.units):
        pc = str(unit.attributes["postcode"])
        for j, year in enumerate(panel.periods):
            if not mask[i, j]:
                rows.setdefault((pc, year), float(series.values.data[i, j]))
    return IncomeTable(tuple((p, y, v) for (p, y), v in sorted(rows.items())))


def write_dataset(panel: PanelDataset, truth: Truth | None, directory) -> dict[str, Path]:
    """Write schools, attributes, income and (optionally) truth files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "schools": directory / "schools.csv",
        "attributes": directory / "attributes.csv",
        "income": directory / "income.csv",
    }
    covs = dict(panel.covariates)
    has_income = INCOME_KEY in covs
    if has_income:
        write_income(income_table(panel), paths["income"])
        del covs[INCOME_KEY]
    else:
        del paths["income"]
    fixed = {k for k, c in covs.items() if c.kind is CovariateKind.FIXED}
    stripped = PanelDataset(panel.units, panel.periods, panel.outcomes,
                            {k: c for k, c in covs.items() if k not in fixed})
    write_panel(stripped, paths["schools"], paths["attributes"])
    if truth is not None:
        paths["truth"] = directory / "truth.csv"
        with open(paths["truth"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["unit_id", "outcome", "year", "counterfactual", "effect"])
            for key in truth.counterfactual:
                for j, year in enumerate(truth.periods):
                    w.writerow([truth.treated, key, year, repr(float(truth.counterfactual[key][j])),
                                repr(float(truth.effect[key][j]))])
    return paths


def load_truth(path) -> Truth:
    rows: dict[str, dict[int, tuple[float, float]]] = {}
    treated = ""
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            treated = rec["unit_id"]
            rows.setdefault(rec["outcome"], {})[int(rec["year"])] = (
                float(rec["counterfactual"]), float(rec["effect"]))
    periods = tuple(sorted(next(iter(rows.values())))) if rows else ()
    cf = {k: np.array([v[y][0] for y in periods]) for k, v in rows.items()}
    ef = {k: np.array([v[y][1] for y in periods]) for k, v in rows.items()}
    return Truth(treated, periods, cf, ef, {})
