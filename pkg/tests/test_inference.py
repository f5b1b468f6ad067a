import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from synthcontrol.errors import InferenceImpossible, ZeroPreFit
from synthcontrol.inference import (
    PlaceboEntry,
    PlaceboStudy,
    exact_p_value,
    rmspe_ratio,
    run_placebo,
    test_sharp_null as sharp_null,
)
from synthcontrol.pool import DonorPool
from synthcontrol.report import dump_json, placebo_record
from synthcontrol.scm import Estimator, build_problem

from conftest import panel_from_arrays

ratios = st.lists(st.floats(0.0, 1e6, allow_nan=False), min_size=2, max_size=40)


def _study(ratio_by_unit, treated):
    entries = [PlaceboEntry(u, 1.0, r, r, (0.0,)) for u, r in ratio_by_unit.items()]
    return PlaceboStudy.from_entries("y", "AbadieNoCov", 2001, (2000, 2001), entries, treated)


def test_rmspe_examples():
    assert rmspe_ratio([1, 1], [2, 2, 2]) == 4.0
    assert rmspe_ratio([1, -1], [0, 0]) == 0.0
    assert rmspe_ratio([3, -1, 2], [2, 3, -1]) == 1.0
    with pytest.raises(ZeroPreFit):
        rmspe_ratio([0.0, 1e-7], [1.0])
    with pytest.raises(ValueError):
        rmspe_ratio([], [1.0])


def test_p_value_examples():
    assert _study({"T": 5.0, "a": 1.0, "b": 2.0, "c": 7.0}, "T").p_value == 0.5
    study = _study({f"u{i:03d}": float(i) for i in range(109)}, "u108")
    assert study.p_value == 1 / 109
    assert _study({"T": 0.1, "a": 1.0, "b": 2.0}, "T").p_value == 1.0


def test_ties_within_tolerance_count():
    assert exact_p_value([1.0, 1.0 - 5e-13, 0.5], 1.0) == 2 / 3
    assert exact_p_value([1.0, 1.0 - 1e-9, 0.5], 1.0) == 1 / 3


def test_sharp_null_decisions():
    base = _study({"T": 5.0, "a": 1.0}, "T")
    for p, alpha, reject in [(0.027, 0.05, True), (0.347, 0.05, False), (0.05, 0.05, True)]:
        study = PlaceboStudy(**{**base.__dict__, "p_value": p})
        d = sharp_null(study, alpha)
        assert (d.p_value, d.alpha, d.reject) == (p, alpha, reject)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            sharp_null(base, bad)


def test_study_needs_two_entries_and_treated():
    with pytest.raises(InferenceImpossible):
        _study({"T": 1.0}, "T")
    with pytest.raises(InferenceImpossible):
        _study({"a": 1.0, "b": 2.0}, "T")


@settings(max_examples=100, deadline=None)
@given(ratios, st.data())
def test_p_value_properties(values, data):
    n = len(values)
    t = data.draw(st.integers(0, n - 1))
    units = {f"u{i:02d}": v for i, v in enumerate(values)}
    p = _study(units, f"u{t:02d}").p_value
    # order invariance
    perm = data.draw(st.permutations(list(units)))
    assert _study({u: units[u] for u in perm}, f"u{t:02d}").p_value == p
    # lower bound and lattice
    assert 1 / n <= p <= 1.0
    assert round(p * n, 9) == int(round(p * n))
    # monotone in the treated ratio
    bumped = dict(units)
    bumped[f"u{t:02d}"] = values[t] * 2 + 1.0
    assert _study(bumped, f"u{t:02d}").p_value <= p


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10 ** 6), min_size=2, max_size=30, unique=True))
def test_distinct_ratios_give_rank_over_n(ints):
    values = [i / 7.0 for i in ints]  # distinct well beyond the tie tolerance
    n = len(values)
    for t, v in enumerate(values):
        p = _study({f"u{i:02d}": x for i, x in enumerate(values)}, f"u{t:02d}").p_value
        assert p == sum(x >= v for x in values) / n


# ---------------------------------------------------------------- run_placebo

def _panel(effect=0.0, seed=0, n=8, t=10, t0=6):
    rng = np.random.default_rng(seed)
    y = 50 + rng.normal(0, 5, n)[:, None] + rng.normal(0, 3, (n, 2)) @ rng.normal(size=(2, t))
    y = y + rng.normal(0, 1, (n, t))
    y[0, t0:] += effect
    panel = panel_from_arrays(y)
    pool = DonorPool("U00", panel.unit_ids[1:])
    return panel, pool, build_problem(panel, pool, "y", 2000 + t0)


def test_placebo_entries_and_extreme_rank():
    panel, pool, template = _panel(effect=40.0)
    study = run_placebo(panel, pool, template, Estimator.ABADIE_NOCOV)
    assert study.n_entries == 8 and not study.excluded
    assert [e.unit for e in study.entries] == sorted(pool.members)
    assert study.treated.unit == "U00"
    assert study.p_value == pytest.approx(1 / 8)
    ratio = max(e.ratio for e in study.entries)
    assert study.treated.ratio == ratio


def test_treated_never_donates_to_placebos():
    # a huge treated series would dominate any placebo that could use it
    panel, pool, template = _panel(effect=1e4)
    study = run_placebo(panel, pool, template, Estimator.ABADIE_NOCOV)
    for e in study.entries:
        if e.unit != "U00":
            assert max(abs(g) for g in e.gaps) < 100


def test_failed_placebo_fits_are_excluded_and_reported():
    rng = np.random.default_rng(1)
    y = rng.normal(50, 5, (6, 8))
    y[3] = y[4]  # each twin fits the other exactly
    panel = panel_from_arrays(y)
    pool = DonorPool("U00", panel.unit_ids[1:])
    study = run_placebo(panel, pool, build_problem(panel, pool, "y", 2005), Estimator.ABADIE_NOCOV)
    assert [u for u, _ in study.excluded] == ["U03", "U04"]
    assert all(r.startswith("ZeroPreFit") for _, r in study.excluded)
    assert study.n_entries == 4
    treated = study.treated.ratio
    assert study.p_value == sum(e.ratio >= treated for e in study.entries) / 4


def test_recount_from_serialized_record():
    panel, pool, template = _panel(effect=3.0, seed=4)
    study = run_placebo(panel, pool, template, Estimator.ABADIE_NOCOV)
    rec = json.loads(dump_json(placebo_record(study, sharp_null(study, 0.1))))
    ratios = {e["unit"]: e["ratio"] for e in rec["entries"]}
    t = ratios[rec["treated"]]
    assert rec["p_value"] == sum(r >= t - 1e-12 for r in ratios.values()) / len(ratios)
    assert rec["n_entries"] == len(rec["entries"]) == 8
    assert rec["reject"] == (rec["p_value"] <= 0.1)


def test_parallel_matches_serial():
    panel, pool, template = _panel(effect=5.0, seed=2)
    a = run_placebo(panel, pool, template, Estimator.FERMAN, jobs=1)
    b = run_placebo(panel, pool, template, Estimator.FERMAN, jobs=3)
    assert dump_json(placebo_record(a)) == dump_json(placebo_record(b))
