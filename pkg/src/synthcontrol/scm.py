"""Synthetic-control estimation problems and the five estimator variants.

``AbadieNested`` chooses diagonal covariate importances ``V`` so that the
covariate-matching weights ``W(V)`` give the smallest pre-treatment outcome
error. The other four estimators fit pre-treatment outcomes directly:

* ``AbadieNoCov`` -- simplex weights, no covariates;
* ``FermanDemeaned`` -- simplex weights on unit-demeaned outcomes;
* ``HsiaoOls`` -- unrestricted OLS with intercept on a donor subset;
* ``ChernL1`` -- l1-ball constrained least squares, no intercept.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.optimize import minimize

from .errors import EmptyPrePeriod, EmptyWindow, MissingOutcome, NoCovariates, UnknownCovariate
from .panel import PanelDataset, collapse_covariate
from .pool import DonorPool
from .solver import SolverSettings, solve_l1_ball_ls, solve_ols, solve_simplex_wls

__all__ = [
    "Estimator",
    "ScmFit",
    "ScmProblem",
    "ScmSettings",
    "build_problem",
    "fit",
    "fit_abadie_nested",
    "fit_abadie_nocov",
    "fit_chern",
    "fit_ferman",
    "fit_hsiao",
]


class Estimator(str, enum.Enum):
    ABADIE_NESTED = "AbadieNested"
    ABADIE_NOCOV = "AbadieNoCov"
    FERMAN = "FermanDemeaned"
    HSIAO = "HsiaoOls"
    CHERN = "ChernL1"

    @classmethod
    def parse(cls, name: str) -> Estimator:
        if isinstance(name, cls):
            return name
        key = str(name).replace("_", "").replace("-", "").lower()
        for e in cls:
            if e.value.lower() == key or e.name.replace("_", "").lower() == key:
                return e
        raise ValueError(f"unknown estimator {name!r}")


@dataclass(frozen=True)
class ScmSettings:
    solver: SolverSettings = field(default_factory=SolverSettings)
    v_max_evals: int = 2000
    v_start_logit: float = 3.0
    hsiao_max_regressors: int | None = None
    chern_bound: float = 1.0


@dataclass(frozen=True, eq=False)
class ScmProblem:
    pool: DonorPool
    outcome_key: str
    treatment_year: int
    periods: tuple[int, ...]
    pre_periods: tuple[int, ...]
    post_periods: tuple[int, ...]
    covariate_keys: tuple[str, ...]
    settings: ScmSettings
    outcomes: np.ndarray            # (periods, 1 + donors), treated first
    covariates: np.ndarray          # (covariates, 1 + donors), raw collapsed values
    covariate_center: np.ndarray    # (covariates,)
    covariate_scale: np.ndarray     # (covariates,)

    @property
    def treated(self) -> str:
        return self.pool.treated

    @property
    def donors(self) -> tuple[str, ...]:
        return self.pool.donors

    @property
    def n_pre(self) -> int:
        return len(self.pre_periods)

    @property
    def y_treated(self) -> np.ndarray:
        return self.outcomes[:, 0]

    @property
    def y_donors(self) -> np.ndarray:
        return self.outcomes[:, 1:]

    def standardized_covariates(self) -> np.ndarray:
        return (self.covariates - self.covariate_center[:, None]) / self.covariate_scale[:, None]


@dataclass(frozen=True, eq=False)
class ScmFit:
    estimator: Estimator
    outcome_key: str
    treated: str
    donors: tuple[str, ...]
    periods: tuple[int, ...]
    treatment_year: int
    weights: np.ndarray
    observed: np.ndarray
    counterfactual: np.ndarray
    importances: np.ndarray | None = None
    intercept: float | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def gaps(self) -> np.ndarray:
        return self.observed - self.counterfactual

    @property
    def pre_mask(self) -> np.ndarray:
        return np.array([p < self.treatment_year for p in self.periods])

    @property
    def pre_mspe(self) -> float:
        g = self.gaps[self.pre_mask]
        return float(np.mean(g * g))

    @property
    def post_mspe(self) -> float:
        g = self.gaps[~self.pre_mask]
        return float(np.mean(g * g)) if g.size else float("nan")

    def gap_at(self, year: int) -> float:
        return float(self.gaps[self.periods.index(year)])


def _standardization(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    donors = x[:, 1:]
    center = donors.mean(axis=1)
    if donors.shape[1] > 1:
        scale = donors.std(axis=1, ddof=1)
    else:
        scale = np.ones(x.shape[0])
    scale = np.where(scale > 0.0, scale, 1.0)
    return center, scale


def build_problem(
    panel: PanelDataset,
    pool: DonorPool,
    outcome_key: str,
    treatment_year: int,
    covariate_keys=(),
    settings: ScmSettings | None = None,
    standardization: tuple[np.ndarray, np.ndarray] | None = None,
) -> ScmProblem:
    """Resolve the pre/post split, outcome block and collapsed covariates.

    Covariates are looked up first among the pool's derived features, then
    among panel covariates (averaged over the pre-treatment years). Pass
    ``standardization=(center, scale)`` to reuse another problem's covariate
    scaling.
    """
    settings = settings or ScmSettings()
    periods = panel.periods
    pre = tuple(p for p in periods if p < treatment_year)
    post = tuple(p for p in periods if p >= treatment_year)
    if not pre:
        raise EmptyPrePeriod(f"no index years before {treatment_year}")
    if not post:
        raise EmptyWindow(f"no index years at or after {treatment_year}")

    members = pool.members
    mat = panel.outcome(outcome_key)
    rows = [panel.unit_index(u) for u in members]
    block = mat[rows]
    mask = np.ma.getmaskarray(block)
    if mask.any():
        cells = [(members[i], periods[j]) for i, j in zip(*np.nonzero(mask))]
        raise MissingOutcome(outcome_key, cells)
    outcomes = np.ascontiguousarray(np.asarray(block.data, dtype=float).T)

    keys = tuple(covariate_keys)
    cov_rows = []
    for key in keys:
        if key in pool.features:
            cov_rows.append(np.asarray(pool.features[key], dtype=float))
        elif key in panel.covariates:
            collapsed = collapse_covariate(panel, key, (pre[0], pre[-1]))
            cov_rows.append(collapsed[rows])
        else:
            raise UnknownCovariate(key)
    covariates = np.array(cov_rows, dtype=float).reshape(len(keys), len(members))
    if standardization is None:
        center, scale = _standardization(covariates)
    else:
        center, scale = (np.asarray(a, dtype=float) for a in standardization)
    return ScmProblem(
        pool, outcome_key, int(treatment_year), periods, pre, post, keys, settings,
        outcomes, covariates, center, scale,
    )


def _combine(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    # only nonzero weights enter, so dropping an unused donor cannot perturb the rounding
    nz = np.flatnonzero(w)
    return y[:, nz] @ w[nz]


def _make_fit(problem: ScmProblem, estimator: Estimator, weights, counterfactual, **kw) -> ScmFit:
    return ScmFit(
        estimator=estimator,
        outcome_key=problem.outcome_key,
        treated=problem.treated,
        donors=problem.donors,
        periods=problem.periods,
        treatment_year=problem.treatment_year,
        weights=np.asarray(weights, dtype=float),
        observed=problem.y_treated.copy(),
        counterfactual=np.asarray(counterfactual, dtype=float),
        **kw,
    )


def _solution_diagnostics(sol) -> dict[str, Any]:
    return {
        "iterations": sol.iterations,
        "converged": sol.converged,
        "polished": sol.polished,
        "non_unique": sol.rank_deficient,
        "objective": sol.objective,
    }


def _softmax(theta: np.ndarray) -> np.ndarray:
    z = np.append(theta, 0.0)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def fit_abadie_nested(problem: ScmProblem) -> ScmFit:
    """Nested fit: inner covariate matching for each candidate ``V``, outer
    Nelder-Mead search over the simplex of importances (softmax logits).

    Candidates: the K exact vertices, then Nelder-Mead from the uniform
    point, from one start leaning toward each free coordinate, and from one
    leaning toward the last. The lowest loss wins; ties go to the
    lexicographically smallest ``V``.
    """
    k = len(problem.covariate_keys)
    if k == 0:
        raise NoCovariates("the nested estimator needs at least one covariate")
    settings = problem.settings
    z = problem.standardized_covariates()
    x1 = np.ascontiguousarray(z[:, 0])
    x0 = np.ascontiguousarray(z[:, 1:])
    pre = problem.n_pre
    y1 = problem.y_treated[:pre]
    y0 = problem.y_donors[:pre]

    seen: dict[bytes, tuple[float, np.ndarray, Any]] = {}

    def evaluate(v: np.ndarray):
        key = v.tobytes()
        if key not in seen:
            sol = solve_simplex_wls(x1, x0, v, settings.solver)
            r = y1 - y0 @ sol.weights
            seen[key] = (float(r @ r), v, sol)
        return seen[key]

    if k == 1:
        loss, v_best, sol = evaluate(np.ones(1))
    else:
        c = settings.v_start_logit
        starts = [np.zeros(k - 1)]
        for i in range(k - 1):
            s = np.zeros(k - 1)
            s[i] = c
            starts.append(s)
        starts.append(np.full(k - 1, -c))  # leans toward the last coordinate
        # exact vertices are unreachable through the softmax; score them directly
        for i in range(k):
            evaluate(np.eye(k)[i])
        budget = max((settings.v_max_evals - k) // len(starts), k + 1)
        for x0_ in starts:
            minimize(
                lambda th: evaluate(_softmax(th))[0],
                x0_,
                method="Nelder-Mead",
                options={"maxfev": budget, "xatol": 1e-8, "fatol": 1e-12, "adaptive": True},
            )
        loss, v_best, sol = min(seen.values(), key=lambda e: (e[0], tuple(e[1])))

    w = sol.weights
    diag = _solution_diagnostics(sol)
    diag.update({"v_objective": loss, "v_evaluations": len(seen), "covariate_scale": problem.covariate_scale.tolist()})
    return _make_fit(problem, Estimator.ABADIE_NESTED, w, _combine(problem.y_donors, w),
                     importances=np.asarray(v_best, dtype=float), diagnostics=diag)


def fit_abadie_nocov(problem: ScmProblem) -> ScmFit:
    pre = problem.n_pre
    sol = solve_simplex_wls(problem.y_treated[:pre], problem.y_donors[:pre].copy(),
                            None, problem.settings.solver)
    w = sol.weights
    return _make_fit(problem, Estimator.ABADIE_NOCOV, w, _combine(problem.y_donors, w),
                     diagnostics=_solution_diagnostics(sol))


def fit_ferman(problem: ScmProblem) -> ScmFit:
    pre = problem.n_pre
    means = problem.outcomes[:pre].mean(axis=0)
    demeaned = problem.outcomes - means
    sol = solve_simplex_wls(demeaned[:pre, 0], demeaned[:pre, 1:].copy(), None, problem.settings.solver)
    w = sol.weights
    counterfactual = means[0] + _combine(demeaned[:, 1:], w)
    diag = _solution_diagnostics(sol)
    diag["pre_means"] = means.tolist()
    return _make_fit(problem, Estimator.FERMAN, w, counterfactual, diagnostics=diag)


def fit_hsiao(problem: ScmProblem, max_regressors: int | None = None) -> ScmFit:
    """OLS with intercept on (a subset of) donors.

    With ``T0`` pre-periods and ``J`` donors, all donors are used when
    ``T0 > J + 1``; otherwise the ``T0 - 2`` donors with the largest
    no-covariate synthetic-control weights are kept. An explicit
    ``max_regressors`` caps the subset size in every case.
    """
    pre = problem.n_pre
    j = len(problem.donors)
    if max_regressors is None:
        max_regressors = problem.settings.hsiao_max_regressors
    if max_regressors is None:
        max_regressors = j if pre > j + 1 else max(pre - 2, 0)
    m = min(int(max_regressors), j)
    if m < 0:
        raise ValueError("max_regressors must be non-negative")
    diag: dict[str, Any] = {}
    if m < j:
        ranking = fit_abadie_nocov(problem).weights
        order = sorted(range(j), key=lambda i: (-ranking[i], i))
        chosen = sorted(order[:m])
        diag["selection"] = {
            "rule": "top AbadieNoCov weights",
            "donors": [problem.donors[i] for i in chosen],
            "ranking_weights": [float(ranking[i]) for i in chosen],
        }
    else:
        chosen = list(range(j))
    y0 = problem.y_donors[:, chosen]
    sol = solve_ols(problem.y_treated[:pre], y0[:pre], intercept=True)
    w = np.zeros(j)
    w[chosen] = sol.weights
    diag.update({"objective": sol.objective, "non_unique": sol.rank_deficient, "regressors": len(chosen)})
    counterfactual = sol.intercept + y0 @ sol.weights
    return _make_fit(problem, Estimator.HSIAO, w, counterfactual, intercept=sol.intercept, diagnostics=diag)


def fit_chern(problem: ScmProblem, bound: float | None = None) -> ScmFit:
    bound = problem.settings.chern_bound if bound is None else float(bound)
    pre = problem.n_pre
    sol = solve_l1_ball_ls(problem.y_treated[:pre], problem.y_donors[:pre].copy(), bound,
                           problem.settings.solver)
    w = sol.weights
    diag = _solution_diagnostics(sol)
    diag["bound"] = bound
    return _make_fit(problem, Estimator.CHERN, w, _combine(problem.y_donors, w), diagnostics=diag)


_DISPATCH = {
    Estimator.ABADIE_NESTED: fit_abadie_nested,
    Estimator.ABADIE_NOCOV: fit_abadie_nocov,
    Estimator.FERMAN: fit_ferman,
    Estimator.HSIAO: fit_hsiao,
    Estimator.CHERN: fit_chern,
}


def fit(problem: ScmProblem, estimator: Estimator | str = Estimator.ABADIE_NESTED) -> ScmFit:
    """Run ``estimator`` on ``problem`` with hyperparameters from its settings."""
    return _DISPATCH[Estimator.parse(estimator)](problem)


def with_settings(problem: ScmProblem, settings: ScmSettings) -> ScmProblem:
    return replace(problem, settings=settings)
