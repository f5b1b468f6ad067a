import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from synthcontrol.errors import AllMissing, DuplicateObservation, EmptyPanel, MalformedRow, NonNumericCell, UnknownOutcome
from synthcontrol.panel import (
    INCOME_KEY,
    CovariateKind,
    CovariateSeries,
    IncomeTable,
    IngestConfig,
    PanelDataset,
    UnitRecord,
    collapse_covariate,
    drop_period,
    join_income,
    load_income,
    load_panel,
    write_income,
    write_panel,
)

HEADER = "unit_id,unit_name,year,reading_y3,reading_y5,numeracy_y3,numeracy_y5,attendance\n"


def _write(tmp_path, text, name="schools.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _small_panel(values, years=(2010, 2011, 2012), postcodes=("2000", "2001")):
    units = tuple(UnitRecord(f"A{i}", f"School {i}", {"postcode": pc}) for i, pc in enumerate(postcodes))
    y = np.zeros((len(units), len(years)))
    return PanelDataset(units, years, {"y": y}, {"x": CovariateSeries.time_varying(values)})


def test_bundled_fixture_has_109_units_and_11_periods(fixture_panel):
    assert fixture_panel.n_units == 109
    assert fixture_panel.periods == (2010, 2011, 2012, 2013, 2014, 2015, 2016, 2017, 2018, 2019, 2021)
    for mat in fixture_panel.outcomes.values():
        assert mat.shape == (109, 11)


def test_excluded_year_absent_from_index(tmp_path):
    rows = [f"S1,One,{y},1,2,3,4,0.9\n" for y in (2019, 2020, 2021)]
    p = _write(tmp_path, HEADER + "".join(rows))
    panel = load_panel(p, IngestConfig(exclude_years=(2020,)))
    assert panel.periods == (2019, 2021)
    assert panel.outcome("reading_y3").shape == (1, 2)


def test_duplicate_unit_year_rejected(tmp_path):
    p = _write(tmp_path, HEADER + "S1,One,2010,1,2,3,4,0.9\nS1,One,2010,1,2,3,4,0.9\n")
    with pytest.raises(DuplicateObservation) as info:
        load_panel(p)
    assert info.value.line == 3


def test_empty_file_with_header_gives_empty_panel(tmp_path):
    panel = load_panel(_write(tmp_path, HEADER))
    assert panel.n_units == 0
    assert panel.periods == ()


def test_malformed_row_reports_line(tmp_path):
    p = _write(tmp_path, HEADER + "S1,One,2010,1,2,3,4,0.9\nS1,One,2011,1,2\n")
    with pytest.raises(MalformedRow) as info:
        load_panel(p)
    assert info.value.line == 3
    assert info.value.details()["line"] == 3


def test_non_numeric_cell_rejected(tmp_path):
    p = _write(tmp_path, HEADER + "S1,One,2010,1,abc,3,4,0.9\n")
    with pytest.raises(NonNumericCell, match="abc"):
        load_panel(p)


def test_empty_cell_is_masked_not_nan(tmp_path):
    p = _write(tmp_path, HEADER + "S1,One,2010,,2,3,4,0.9\nS1,One,2011,5,2,3,4,\n")
    panel = load_panel(p)
    r3 = panel.outcome("reading_y3")
    assert bool(r3.mask[0, 0]) and not bool(r3.mask[0, 1])
    assert r3.data[0, 0] == 0.0
    assert not np.isnan(r3.data).any()
    att = panel.covariate("attendance")
    assert att.kind is CovariateKind.TIME_VARYING
    assert bool(att.values.mask[0, 1])


def test_header_must_list_outcomes(tmp_path):
    p = _write(tmp_path, "unit_id,unit_name,year,reading_y3\nS1,One,2010,1\n")
    with pytest.raises(MalformedRow, match="outcome"):
        load_panel(p)


def test_attributes_become_fixed_covariates(tmp_path):
    p = _write(tmp_path, HEADER + "S1,One,2010,1,2,3,4,0.9\nS2,Two,2010,1,2,3,4,0.8\n")
    a = _write(tmp_path, "unit_id,postcode,coeducational,first_teacher_year\nS1,2000,true,1963\nS2,2001,no,1970\n",
               "attrs.csv")
    panel = load_panel(p, IngestConfig(attributes_file=a))
    assert panel.unit("S1").attributes["postcode"] == "2000"
    assert panel.unit("S2").attributes["coeducational"] is False
    assert panel.covariate("first_teacher_year").kind is CovariateKind.FIXED
    assert "postcode" not in panel.covariates


def test_panel_is_immutable(fixture_panel):
    with pytest.raises((ValueError, TypeError)):
        fixture_panel.outcome("numeracy_y3").data[0, 0] = 1.0
    with pytest.raises(TypeError):
        fixture_panel.outcomes["new"] = None
    with pytest.raises(TypeError):
        fixture_panel.units[0].attributes["postcode"] = "x"


def test_panel_pickles_and_stays_read_only(fixture_panel):
    copy = pickle.loads(pickle.dumps(fixture_panel))
    assert copy.unit_ids == fixture_panel.unit_ids
    np.testing.assert_array_equal(copy.outcome("reading_y5"), fixture_panel.outcome("reading_y5"))
    assert not copy.covariate("icsea").values.data.flags.writeable


def test_unit_invariants():
    with pytest.raises(ValueError):
        UnitRecord("x", "x", {"latitude": 91.0})
    with pytest.raises(ValueError):
        UnitRecord("x", "x", {"longitude": -180.5})
    units = (UnitRecord("a", "a"), UnitRecord("a", "b"))
    with pytest.raises(ValueError, match="unique"):
        PanelDataset(units, (2010,), {"y": np.zeros((2, 1))})
    with pytest.raises(ValueError, match="increasing"):
        PanelDataset(units[:1], (2011, 2010), {"y": np.zeros((1, 2))})
    with pytest.raises(ValueError, match="shape"):
        PanelDataset(units[:1], (2010,), {"y": np.zeros((1, 2))})
    with pytest.raises(UnknownOutcome):
        PanelDataset(units[:1], (2010,), {"y": np.zeros((1, 1))}).outcome("z")


def test_join_income_lookup_missing_and_fanout():
    panel = _small_panel(np.zeros((3, 3)), postcodes=("2000", "2000", "9999"))
    income = IncomeTable((("2000", 2010, 50000.0), ("2000", 2012, 52000.0)))
    joined = join_income(panel, income)
    cov = joined.covariate(INCOME_KEY).values
    assert cov[0, 0] == 50000.0
    assert bool(cov.mask[0, 1])
    np.testing.assert_array_equal(cov[0], cov[1])
    assert cov.mask[2].all()


def test_income_table_rejects_duplicates(tmp_path):
    with pytest.raises(DuplicateObservation):
        IncomeTable((("2000", 2010, 1.0), ("2000", 2010, 2.0)))
    p = _write(tmp_path, "postcode,year,mean_taxable_income\n2000,2010,1\n2000,2010,2\n", "inc.csv")
    with pytest.raises(DuplicateObservation):
        load_income(p)


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(6))))
def test_join_income_order_independent(order):
    rows = [(pc, y, float(i * 100 + y)) for i, (pc, y) in enumerate(
        [("2000", 2010), ("2000", 2011), ("2000", 2012), ("2001", 2010), ("2001", 2011), ("2001", 2012)])]
    panel = _small_panel(np.zeros((2, 3)))
    a = join_income(panel, IncomeTable(tuple(rows))).covariate(INCOME_KEY).values
    b = join_income(panel, IncomeTable(tuple(rows[i] for i in order))).covariate(INCOME_KEY).values
    np.testing.assert_array_equal(a.filled(np.nan), b.filled(np.nan))


def test_drop_period():
    panel = _small_panel(np.arange(6.0).reshape(2, 3), years=(2019, 2020, 2021))
    dropped = drop_period(panel, 2020)
    assert dropped.periods == (2019, 2021)
    assert dropped.outcome("y").shape == (2, 2)
    np.testing.assert_array_equal(dropped.covariate("x").values, [[0.0, 2.0], [3.0, 5.0]])
    assert drop_period(dropped, 2020) is dropped
    with pytest.raises(EmptyPanel):
        drop_period(drop_period(dropped, 2019), 2021)


def test_drop_2020_from_full_index():
    panel = _small_panel(np.zeros((2, 12)), years=tuple(range(2010, 2022)))
    assert len(drop_period(panel, 2020).periods) == 11


def test_collapse_covariate_examples():
    panel = _small_panel(np.array([[10.0, 20.0, 30.0], [10.0, 0.0, 30.0]]))
    masked = PanelDataset(panel.units, panel.periods, panel.outcomes, {
        "x": CovariateSeries.time_varying([[10.0, 20.0, 30.0], [10.0, 0.0, 30.0]],
                                          [[False] * 3, [False, True, False]]),
        "fixed": CovariateSeries.fixed([1963.0, 1970.0]),
    })
    np.testing.assert_allclose(collapse_covariate(masked, "x"), [20.0, 20.0])
    assert collapse_covariate(masked, "fixed", (2010, 2010))[0] == 1963.0
    assert collapse_covariate(masked, "x", (2011, 2012))[0] == 25.0
    with pytest.raises(AllMissing) as info:
        collapse_covariate(masked, "x", (2011, 2011))
    assert info.value.units == ["A1"]


def test_drop_then_collapse_matches_collapse_before():
    rng = np.random.default_rng(0)
    panel = _small_panel(rng.normal(size=(2, 3)), years=(2019, 2020, 2021))
    before = collapse_covariate(panel, "x", (2021, 2021))
    after = collapse_covariate(drop_period(panel, 2020), "x", (2021, 2021))
    np.testing.assert_array_equal(before, after)


def test_round_trip_bundled_files(tmp_path, fixture_panel):
    from synthcontrol.simgen import bundled_path
    src = bundled_path()
    panel = load_panel(src / "schools.csv", IngestConfig(attributes_file=src / "attributes.csv"))
    write_panel(PanelDataset(panel.units, panel.periods, panel.outcomes,
                             {k: c for k, c in panel.covariates.items() if c.kind is CovariateKind.TIME_VARYING}),
                tmp_path / "s.csv", tmp_path / "a.csv")
    assert (tmp_path / "s.csv").read_bytes() == (src / "schools.csv").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (src / "attributes.csv").read_bytes()
    write_income(load_income(src / "income.csv"), tmp_path / "i.csv")
    assert (tmp_path / "i.csv").read_bytes() == (src / "income.csv").read_bytes()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-1e6, 1e6, allow_nan=False)), min_size=6, max_size=6))
def test_round_trip_property(tmp_path_factory, cells):
    d = tmp_path_factory.mktemp("rt")
    vals = np.array([0.0 if c is None else c for c in cells]).reshape(2, 3)
    mask = np.array([c is None for c in cells]).reshape(2, 3)
    units = (UnitRecord("a", "A"), UnitRecord("b", "B"))
    panel = PanelDataset(units, (2010, 2011, 2012), {
        k: np.ma.MaskedArray(vals, mask) for k in ("reading_y3", "reading_y5", "numeracy_y3", "numeracy_y5")
    })
    write_panel(panel, d / "s.csv")
    back = load_panel(d / "s.csv")
    for k in panel.outcomes:
        np.testing.assert_array_equal(np.ma.getmaskarray(back.outcome(k)), mask)
        np.testing.assert_array_equal(back.outcome(k).filled(0.0), vals)
