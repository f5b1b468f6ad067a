"""Effect summaries and robustness checks built on top of fitted models."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import AllMissing, EmptyWindow, NoDonors, ScmError
from .panel import PanelDataset
from .parallel import ordered_map
from .pool import DonorPool, pool_without
from .scm import Estimator, ScmFit, ScmProblem, build_problem, fit

__all__ = [
    "SD_BASIS_MODES",
    "EffectSummary",
    "LooAggregate",
    "LooResult",
    "LooStudy",
    "PercentileRow",
    "PercentileTable",
    "SdBasis",
    "SweepCell",
    "Windows",
    "default_windows",
    "leave_one_out",
    "percentile_rank",
    "percentile_table",
    "sd_basis",
    "sensitivity_sweep",
    "summarize_effect",
]

SD_BASIS_MODES = ("donor-pre-pooled", "donor-pre-cross-section", "treated-pre", "none")
SWEEP_ESTIMATORS = (Estimator.ABADIE_NOCOV, Estimator.FERMAN, Estimator.HSIAO, Estimator.CHERN)


class Windows(NamedTuple):
    full_post: tuple[int, ...]
    strict: tuple[int, ...]

    @property
    def strict_empty(self) -> bool:
        return not self.strict


def default_windows(treatment_year: int, periods: Sequence[int], offset: int = 3) -> Windows:
    """All index years from treatment on, and those at least ``offset`` years later."""
    full = tuple(int(p) for p in periods if p >= treatment_year)
    return Windows(full, tuple(p for p in full if p >= treatment_year + offset))


def span(years: Sequence[int]) -> tuple[int, int]:
    if not years:
        raise EmptyWindow("window has no index years")
    return int(min(years)), int(max(years))


@dataclass(frozen=True)
class SdBasis:
    value: float
    mode: str


def sd_basis(problem: ScmProblem, mode: str = "donor-pre-pooled") -> SdBasis:
    """Divisor for expressing effects in standard-deviation units.

    ``donor-pre-pooled``: sample s.d. of all donor outcome values in
    pre-treatment years. ``donor-pre-cross-section``: mean over pre years of
    the across-donor s.d. ``treated-pre``: s.d. of the treated unit's own
    pre-treatment outcomes. ``none``: 1.
    """
    pre = problem.n_pre
    donors = problem.y_donors[:pre]
    if mode == "donor-pre-pooled":
        value = float(np.std(donors, ddof=1)) if donors.size > 1 else float("nan")
    elif mode == "donor-pre-cross-section":
        value = float(np.mean(np.std(donors, axis=1, ddof=1))) if donors.shape[1] > 1 else float("nan")
    elif mode == "treated-pre":
        value = float(np.std(problem.y_treated[:pre], ddof=1)) if pre > 1 else float("nan")
    elif mode == "none":
        value = 1.0
    else:
        raise ValueError(f"unknown sd-basis mode {mode!r}; choose from {SD_BASIS_MODES}")
    return SdBasis(value, mode)


@dataclass(frozen=True)
class EffectSummary:
    outcome_key: str
    window: tuple[int, int]
    years: tuple[int, ...]
    att_points: float
    att_sd_units: float
    sd_basis: float
    sd_basis_mode: str
    gaps: tuple[float, ...]


def summarize_effect(fit_: ScmFit, window: tuple[int, int], basis: SdBasis | None = None) -> EffectSummary:
    """Mean gap over the index years inside the inclusive ``window``."""
    start, end = int(window[0]), int(window[1])
    if start < fit_.treatment_year:
        raise ValueError(f"window starts in {start}, before treatment in {fit_.treatment_year}")
    pos = [i for i, y in enumerate(fit_.periods) if start <= y <= end]
    if not pos:
        raise EmptyWindow(f"window {start}-{end} contains no index years")
    gaps = fit_.gaps[pos]
    att = float(np.mean(gaps))
    basis = basis or SdBasis(1.0, "none")
    return EffectSummary(
        fit_.outcome_key, (start, end), tuple(fit_.periods[i] for i in pos), att,
        att / basis.value, basis.value, basis.mode, tuple(float(g) for g in gaps),
    )


# ---------------------------------------------------------------- leave-one-out

@dataclass(frozen=True)
class LooResult:
    excluded: str
    summaries: Mapping[str, EffectSummary]      # outcome -> summary
    fits: Mapping[str, ScmFit] = field(default_factory=dict, compare=False)
    errors: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class LooAggregate:
    outcome_key: str
    n_runs: int
    mean: float
    sd: float
    min: float
    max: float

    def formatted(self, digits: int = 2) -> tuple[str, str, str]:
        f = f"{{:.{digits}f}}"
        return (f.format(self.mean), f"({f.format(self.sd)})",
                f"[{f.format(self.min)}, {f.format(self.max)}]")


@dataclass(frozen=True)
class LooStudy:
    estimator: Estimator
    window: tuple[int, int]
    donors: tuple[str, ...]
    mean_weights: tuple[float, ...]
    baseline: Mapping[str, EffectSummary]
    results: tuple[LooResult, ...]
    aggregates: Mapping[str, LooAggregate]


def _aggregate(key: str, values: list[float]) -> LooAggregate:
    a = np.array(values, dtype=float)
    if a.size == 0:
        nan = float("nan")
        return LooAggregate(key, 0, nan, nan, nan, nan)
    sd = float(np.std(a, ddof=1)) if a.size > 1 else float("nan")
    return LooAggregate(key, int(a.size), float(a.mean()), sd, float(a.min()), float(a.max()))


def _top_donors(fits: Sequence[ScmFit], k: int) -> tuple[list[str], list[float]]:
    donors = fits[0].donors
    mean_w = np.mean([f.weights for f in fits], axis=0)
    positive = int(np.count_nonzero(mean_w > 0.0))
    if not 1 <= k <= positive:
        raise ValueError(f"k={k} but the baseline has {positive} positive-weight donor(s)")
    order = sorted(range(len(donors)), key=lambda i: (-mean_w[i], i))[:k]
    return [donors[i] for i in order], [float(mean_w[i]) for i in order]


def _loo_task(args):
    panel, pool, problem, estimator, donor = args
    try:
        reduced = pool_without(pool, donor)
    except NoDonors as err:
        return None, f"{type(err).__name__}: {err}"
    try:
        sub = build_problem(
            panel, reduced, problem.outcome_key, problem.treatment_year, problem.covariate_keys,
            problem.settings, standardization=(problem.covariate_center, problem.covariate_scale),
        )
        return fit(sub, estimator), None
    except ScmError as err:
        return None, f"{type(err).__name__}: {err}"


def leave_one_out(
    panel: PanelDataset,
    pool: DonorPool,
    problems: Mapping[str, ScmProblem],
    k: int = 8,
    estimator: Estimator | str = Estimator.ABADIE_NESTED,
    window: tuple[int, int] | None = None,
    basis_mode: str = "donor-pre-pooled",
    jobs: int = 1,
    baseline: Mapping[str, ScmFit] | None = None,
) -> LooStudy:
    """Drop each of the top-``k`` donors in turn and refit every outcome.

    Donors are ranked by their weight averaged across outcomes in the
    baseline fits (ties by pool order). Refits reuse the baseline covariate
    scaling, so removing a donor changes nothing else about the problem.
    ``window`` defaults to the strict three-year window.
    """
    estimator = Estimator.parse(estimator)
    keys = list(problems)
    if baseline is None:
        baseline = {key: fit(problems[key], estimator) for key in keys}
    first = problems[keys[0]]
    if window is None:
        window = span(default_windows(first.treatment_year, first.periods).strict)
    bases = {key: sd_basis(problems[key], basis_mode) for key in keys}
    top, top_w = _top_donors([baseline[key] for key in keys], k)

    tasks = [(panel, pool, problems[key], estimator, d) for d in top for key in keys]
    out = ordered_map(_loo_task, tasks, jobs)
    results = []
    for i, donor in enumerate(top):
        fits, summaries, errors = {}, {}, {}
        for j, key in enumerate(keys):
            f, err = out[i * len(keys) + j]
            if f is None:
                errors[key] = err
                continue
            fits[key] = f
            summaries[key] = summarize_effect(f, window, bases[key])
        results.append(LooResult(donor, summaries, fits, errors))

    aggregates = {
        key: _aggregate(key, [r.summaries[key].att_points for r in results if key in r.summaries])
        for key in keys
    }
    base_summaries = {key: summarize_effect(baseline[key], window, bases[key]) for key in keys}
    return LooStudy(estimator, tuple(window), tuple(top), tuple(top_w), base_summaries,
                    tuple(results), aggregates)


# ---------------------------------------------------------------- sensitivity

@dataclass(frozen=True)
class SweepCell:
    estimator: Estimator
    outcome_key: str
    fit: ScmFit | None
    error: str | None = None


def _sweep_task(args):
    problem, estimator = args
    try:
        return fit(problem, estimator), None
    except ScmError as err:
        return None, f"{type(err).__name__}: {err}"


def sensitivity_sweep(
    problems: Mapping[str, ScmProblem],
    estimators: Sequence[Estimator | str] = SWEEP_ESTIMATORS,
    jobs: int = 1,
) -> list[SweepCell]:
    """Fit every (estimator, outcome) pair; failures are recorded, not raised."""
    ests = [Estimator.parse(e) for e in estimators]
    pairs = [(e, key) for e in ests for key in problems]
    out = ordered_map(_sweep_task, [(problems[key], e) for e, key in pairs], jobs)
    return [SweepCell(e, key, f, err) for (e, key), (f, err) in zip(pairs, out)]


# ---------------------------------------------------------------- percentiles

def percentile_rank(values: Sequence[float]) -> list[int]:
    """Integer percentile of each value within ``values``.

    Rank is the count of values <= it (so ties share the higher rank), scaled
    by 100/N and rounded half up.
    """
    a = np.asarray(values, dtype=float)
    n = a.size
    srt = np.sort(a)
    ranks = np.searchsorted(srt, a, side="right")
    return [int(math.floor(r * 100.0 / n + 0.5)) for r in ranks]


@dataclass(frozen=True)
class PercentileRow:
    unit: str
    outcome_key: str
    pre: int
    post: int

    @property
    def difference(self) -> int:
        return self.post - self.pre


@dataclass(frozen=True)
class PercentileTable:
    split_year: int
    outcome_keys: tuple[str, ...]
    population: tuple[str, ...]
    rows: tuple[PercentileRow, ...]

    def lookup(self, unit: str, outcome_key: str) -> PercentileRow:
        for r in self.rows:
            if r.unit == unit and r.outcome_key == outcome_key:
                return r
        raise KeyError((unit, outcome_key))


def _window_means(panel: PanelDataset, key: str, rows: list[int], cols: np.ndarray, units) -> np.ndarray:
    block = panel.outcome(key)[rows][:, cols]
    counts = block.count(axis=1)
    empty = [u for u, c in zip(units, counts) if c == 0]
    if empty:
        raise AllMissing(key, empty)
    return np.asarray(block.mean(axis=1).data, dtype=float)


def percentile_table(
    panel: PanelDataset,
    population: Sequence[str],
    outcome_keys: Sequence[str],
    split_year: int,
    units: Sequence[str] | None = None,
) -> PercentileTable:
    """Percentile ranks of mean outcomes before and from ``split_year``.

    Ranks are taken within ``population``; rows are emitted for ``units``
    (default: the whole population), in the given order.
    """
    population = list(population)
    if int(split_year) not in panel.periods:
        raise ValueError(f"split year {split_year} is not in the period index")
    units = population if units is None else list(units)
    missing = [u for u in units if u not in population]
    if missing:
        raise ValueError(f"units {missing} are not in the ranking population")
    rows_idx = [panel.unit_index(u) for u in population]
    periods = np.array(panel.periods)
    pre_cols = np.flatnonzero(periods < split_year)
    post_cols = np.flatnonzero(periods >= split_year)
    if pre_cols.size == 0:
        raise EmptyWindow(f"no index years before {split_year}")
    pos = {u: i for i, u in enumerate(population)}
    out = []
    for key in outcome_keys:
        pre = percentile_rank(_window_means(panel, key, rows_idx, pre_cols, population))
        post = percentile_rank(_window_means(panel, key, rows_idx, post_cols, population))
        out.extend(PercentileRow(u, key, pre[pos[u]], post[pos[u]]) for u in units)
    return PercentileTable(int(split_year), tuple(outcome_keys), tuple(population), tuple(out))
