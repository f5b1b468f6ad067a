import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from synthcontrol.analysis import (
    LooAggregate,
    SdBasis,
    default_windows,
    leave_one_out,
    percentile_rank,
    percentile_table,
    sd_basis,
    sensitivity_sweep,
    span,
    summarize_effect,
)
from synthcontrol.config import DEFAULT_COVARIATES
from synthcontrol.errors import EmptyWindow
from synthcontrol.pool import pool_without
from synthcontrol.scm import Estimator, ScmFit, ScmSettings, build_problem, fit

from conftest import FAST_EVALS, panel_from_arrays, problem_from_arrays

PERIODS = (2010, 2011, 2012, 2013, 2014, 2015, 2016, 2017, 2018, 2019, 2021)


def _fit_with_gaps(gaps, periods=PERIODS, treatment_year=2014):
    gaps = np.asarray(gaps, dtype=float)
    return ScmFit(Estimator.ABADIE_NOCOV, "y", "T", ("a",), tuple(periods), treatment_year,
                  np.ones(1), gaps.copy(), np.zeros_like(gaps))


@pytest.fixture(scope="module")
def fixture_problems(fixture_panel, fixture_pool):
    s = ScmSettings(v_max_evals=FAST_EVALS)
    return {k: build_problem(fixture_panel, fixture_pool, k, 2014, DEFAULT_COVARIATES, s)
            for k in ("numeracy_y3", "numeracy_y5", "reading_y3", "reading_y5")}


# ---------------------------------------------------------------- windows and effects

def test_strict_window_skips_gap_year():
    w = default_windows(2014, PERIODS)
    assert w.full_post == (2014, 2015, 2016, 2017, 2018, 2019, 2021)
    assert w.strict == (2017, 2018, 2019, 2021)
    assert not w.strict_empty
    assert span(w.strict) == (2017, 2021)


def test_treatment_in_last_year_flags_empty_strict_window():
    w = default_windows(2021, PERIODS)
    assert w.full_post == (2021,) and w.strict == () and w.strict_empty
    with pytest.raises(EmptyWindow):
        span(w.strict)


@given(st.integers(2005, 2025), st.integers(0, 6))
def test_full_window_contains_strict(ty, offset):
    w = default_windows(ty, PERIODS, offset)
    assert set(w.strict) <= set(w.full_post)


def test_summarize_examples():
    gaps = [0, 0, 0, 0, 1, 2, 3, 10, 20, 30, 40]
    s = summarize_effect(_fit_with_gaps(gaps), (2017, 2021), SdBasis(27.82, "donor-pre-pooled"))
    assert s.att_points == 25.0
    assert s.years == (2017, 2018, 2019, 2021)
    assert s.gaps == (10.0, 20.0, 30.0, 40.0)
    assert summarize_effect(_fit_with_gaps(gaps), (2019, 2019)).att_points == 30.0
    assert 75.66 / 27.82 == pytest.approx(2.72, abs=0.005)


def test_summarize_errors():
    f = _fit_with_gaps(np.zeros(11))
    with pytest.raises(EmptyWindow):
        summarize_effect(f, (2020, 2020))
    with pytest.raises(ValueError, match="before treatment"):
        summarize_effect(f, (2013, 2015))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-500, 500, allow_nan=False), min_size=11, max_size=11),
       st.floats(0.5, 100), st.sampled_from([(2014, 2021), (2017, 2021), (2016, 2016)]))
def test_effect_arithmetic_and_linearity(gaps, basis, window):
    b = SdBasis(basis, "donor-pre-pooled")
    s = summarize_effect(_fit_with_gaps(gaps), window, b)
    assert s.att_sd_units * s.sd_basis == pytest.approx(s.att_points, abs=1e-9)
    d = summarize_effect(_fit_with_gaps(2 * np.array(gaps)), window, b)
    assert d.att_points == pytest.approx(2 * s.att_points, abs=1e-9)
    assert d.att_sd_units == pytest.approx(2 * s.att_sd_units, abs=1e-9)


def test_sd_basis_modes():
    y = np.array([[0.0, 2.0, 9.0], [1.0, 3.0, 0.0], [5.0, 9.0, 0.0], [2.0, 2.0, 0.0]])
    p = problem_from_arrays(y, 2002)
    donors = y[1:, :2]
    assert sd_basis(p).value == pytest.approx(np.std(donors.ravel(), ddof=1))
    assert sd_basis(p, "donor-pre-cross-section").value == pytest.approx(
        np.mean([np.std(donors[:, 0], ddof=1), np.std(donors[:, 1], ddof=1)]))
    assert sd_basis(p, "treated-pre").value == pytest.approx(np.std([0.0, 2.0], ddof=1))
    assert sd_basis(p, "none").value == 1.0
    with pytest.raises(ValueError):
        sd_basis(p, "bogus")


def test_fixture_sd_basis_is_cross_sectional_scale(fixture_problems):
    # back-computed divisors in the source analysis are ~28 (numeracy Y3) and ~34 (reading Y3)
    v = sd_basis(fixture_problems["numeracy_y3"]).value
    assert 15 < v < 45


# ---------------------------------------------------------------- percentiles

def test_percentile_examples():
    assert percentile_rank([10.0, 20.0, 30.0]) == [33, 67, 100]
    assert percentile_rank(list(range(100)))[-1] == 100
    assert percentile_rank([5.0, 5.0, 1.0]) == [100, 100, 33]


def test_percentile_table_static_pool():
    y = np.array([[1.0, 1.0, 5.0, 5.0], [2.0, 2.0, 2.0, 2.0], [3.0, 3.0, 3.0, 3.0]])
    panel = panel_from_arrays(y, years=(2012, 2013, 2014, 2015))
    t = percentile_table(panel, panel.unit_ids, ["y"], 2014)
    r0, r1 = t.lookup("U00", "y"), t.lookup("U01", "y")
    assert (r0.pre, r0.post, r0.difference) == (33, 100, 67)
    assert (r1.pre, r1.post) == (67, 33)
    assert sum(r.difference for r in t.rows) == 0
    with pytest.raises(ValueError):
        percentile_table(panel, panel.unit_ids, ["y"], 2020)
    with pytest.raises(KeyError):
        t.lookup("U09", "y")


def test_percentile_difference_zero_when_unchanged():
    rng = np.random.default_rng(3)
    base = rng.normal(size=(10, 1))
    panel = panel_from_arrays(np.hstack([base, base, base + 0.0]), years=(2000, 2001, 2002))
    t = percentile_table(panel, panel.unit_ids, ["y"], 2002)
    assert all(r.difference == 0 for r in t.rows)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 10 ** 6), min_size=3, max_size=40, unique=True), st.randoms())
def test_percentile_differences_sum_to_zero(pre, rnd):
    post = list(pre)
    rnd.shuffle(post)
    y = np.array([[a, b] for a, b in zip(pre, post)], dtype=float)
    panel = panel_from_arrays(y, years=(2000, 2001))
    t = percentile_table(panel, panel.unit_ids, ["y"], 2001)
    assert sum(r.difference for r in t.rows) == 0


def test_fixture_percentiles_in_range(fixture_panel, fixture_pool):
    t = percentile_table(fixture_panel, fixture_pool.members, ["numeracy_y3"], 2014, ["S000"])
    r = t.lookup("S000", "numeracy_y3")
    assert 1 <= r.pre <= 100 and 1 <= r.post <= 100
    # the injected effect lifts the treated unit's rank
    assert r.difference > 0


# ---------------------------------------------------------------- leave-one-out

def test_loo_aggregate_format():
    a = LooAggregate("y", 8, 74.28, 0.97, 71.98, 76.58)
    assert " ".join(a.formatted()) == "74.28 (0.97) [71.98, 76.58]"


def test_loo_fixture_top_eight(fixture_panel, fixture_pool, fixture_problems):
    study = leave_one_out(fixture_panel, fixture_pool, fixture_problems, k=8)
    assert len(study.results) == 8 and len(study.donors) == 8
    assert list(study.mean_weights) == sorted(study.mean_weights, reverse=True)
    assert study.window == (2017, 2021)
    for key, agg in study.aggregates.items():
        vals = [r.summaries[key].att_points for r in study.results]
        assert agg.n_runs == 8
        assert agg.min <= agg.mean <= agg.max
        assert agg.min == min(vals) and agg.max == max(vals)
        assert agg.sd == pytest.approx(np.std(vals, ddof=1))
    for r in study.results:
        f = r.fits["numeracy_y3"]
        assert r.excluded not in f.donors and len(f.donors) == 107


def test_loo_k_one_and_bounds(fixture_panel, fixture_pool, fixture_problems):
    probs = {"reading_y5": fixture_problems["reading_y5"]}
    study = leave_one_out(fixture_panel, fixture_pool, probs, k=1, estimator=Estimator.ABADIE_NOCOV)
    assert len(study.results) == 1 and list(study.results[0].summaries) == ["reading_y5"]
    with pytest.raises(ValueError, match="positive-weight"):
        leave_one_out(fixture_panel, fixture_pool, probs, k=100, estimator=Estimator.ABADIE_NOCOV)


def test_removing_inactive_donor_reproduces_fit():
    rng = np.random.default_rng(2)
    y = 50 + rng.normal(0, 3, (7, 9))
    y[6] = y[0] + 1000.0  # far from the treated path, never used
    panel = panel_from_arrays(y)
    from synthcontrol.pool import DonorPool
    pool = DonorPool("U00", panel.unit_ids[1:])
    base = fit(build_problem(panel, pool, "y", 2006), Estimator.ABADIE_NOCOV)
    assert base.weights[-1] == 0.0
    reduced = fit(build_problem(panel, pool_without(pool, "U06"), "y", 2006), Estimator.ABADIE_NOCOV)
    assert reduced.counterfactual.tobytes() == base.counterfactual.tobytes()
    assert reduced.weights.tobytes() == base.weights[:-1].tobytes()


# ---------------------------------------------------------------- sensitivity

def test_sensitivity_cardinality_and_inclusion(fixture_problems):
    cells = sensitivity_sweep(fixture_problems)
    assert len(cells) == 16 and all(c.error is None for c in cells)
    by = {(c.estimator, c.outcome_key): c.fit for c in cells}
    for key in fixture_problems:
        assert by[(Estimator.CHERN, key)].pre_mspe <= by[(Estimator.ABADIE_NOCOV, key)].pre_mspe + 1e-9
        p = fixture_problems[key]
        strict = span(default_windows(2014, p.periods).strict)
        signs = {np.sign(summarize_effect(by[(e, key)], strict).att_points) for e in
                 (Estimator.ABADIE_NOCOV, Estimator.FERMAN, Estimator.HSIAO, Estimator.CHERN)}
        assert signs == {1.0}


def test_sensitivity_records_failures():
    y = np.random.default_rng(0).normal(size=(6, 6))
    p = problem_from_arrays(y, 2003, settings=ScmSettings(hsiao_max_regressors=5))
    cells = sensitivity_sweep({"y": p}, [Estimator.HSIAO, Estimator.ABADIE_NOCOV])
    assert cells[0].fit is None and cells[0].error.startswith("UnderdeterminedSystem")
    assert cells[1].fit is not None
