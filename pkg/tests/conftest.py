from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from synthcontrol.config import write_config
from synthcontrol.panel import CovariateSeries, IngestConfig, PanelDataset, UnitRecord, join_income, load_income, load_panel
from synthcontrol.pool import DonorFilterSpec, DonorPool, build_pool
from synthcontrol.scm import ScmSettings, build_problem
from synthcontrol.simgen import bundled_path

MAIN_SPEC = bundled_path("main_spec.toml")
FAST_EVALS = 200


def panel_from_arrays(y: np.ndarray, years=None, covariates=None, key: str = "y") -> PanelDataset:
    """Units in rows (unit 0 is treated), years in columns."""
    y = np.asarray(y, dtype=float)
    n, t = y.shape
    years = tuple(years or range(2000, 2000 + t))
    units = tuple(UnitRecord(f"U{i:02d}", f"Unit {i}") for i in range(n))
    covs = {}
    for name, values in (covariates or {}).items():
        covs[name] = CovariateSeries.fixed(values)
    return PanelDataset(units, years, {key: y}, covs)


def problem_from_arrays(y, treatment_year, years=None, covariates=None, settings=None, key="y"):
    panel = panel_from_arrays(y, years, covariates, key)
    pool = DonorPool(panel.unit_ids[0], panel.unit_ids[1:])
    return build_problem(panel, pool, key, treatment_year, tuple(covariates or ()), settings or ScmSettings())


def load_fixture_panel():
    data = bundled_path()
    panel = load_panel(data / "schools.csv", IngestConfig(
        attributes_file=data / "attributes.csv", exclude_years=(2020,)))
    return join_income(panel, load_income(data / "income.csv"))


def fixture_filter() -> DonorFilterSpec:
    return DonorFilterSpec(
        "S000",
        (("remoteness", "Major Cities of Australia"), ("coeducational", True), ("grade_span", "K-6")),
        (("lbote_pct", 10.0, 15.0),),
    )


def write_run_config(directory: Path, evals: int = FAST_EVALS, **sections) -> Path:
    """Copy of the bundled main specification with absolute data paths and a
    smaller V-search budget; ``sections`` update individual tables."""
    raw = tomllib.loads(MAIN_SPEC.read_text(encoding="utf-8"))
    data = bundled_path()
    for k in ("schools", "attributes", "income"):
        raw["data"][k] = str(data / raw["data"][k])
    raw["estimator"]["v_max_evals"] = evals
    raw.pop("simulate", None)
    for name, values in sections.items():
        raw.setdefault(name, {}).update(values)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "run.toml"
    write_config(raw, path)
    return path


@pytest.fixture(scope="session")
def fixture_panel():
    return load_fixture_panel()


@pytest.fixture(scope="session")
def fixture_pool(fixture_panel):
    return build_pool(fixture_panel, fixture_filter())


@pytest.fixture
def run_config(tmp_path):
    return write_run_config(tmp_path / "cfg")
