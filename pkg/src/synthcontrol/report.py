"""Serialisable records, publication-style tables, and figure data.

Every table is rendered from a plain JSON record (``fit_record``,
``placebo_record``, ``loo_record``), never from live solver objects, so
each printed number can be recomputed from the saved JSON by rounding
alone.

Record schemas (all keys always present):

``fit``
    ``schema``, ``estimator``, ``outcome``, ``treated`` {``id``, ``name``},
    ``treatment_year``, ``periods``, ``donors`` [{``id``, ``name``,
    ``weight``}] in pool order, ``intercept``, ``importances`` {covariate:
    v} or null, ``observed``, ``counterfactual``, ``gaps``, ``pre_mspe``,
    ``post_mspe``, ``covariates`` [{``key``, ``label``, ``treated``,
    ``donors``}] with raw (unstandardised) values, ``effects`` (list of
    effect summaries), ``diagnostics``.
``placebo``
    ``schema``, ``outcome``, ``estimator``, ``treatment_year``, ``periods``,
    ``treated``, ``p_value``, ``alpha``, ``reject``, ``n_entries``,
    ``entries`` [{``unit``, ``pre_mspe``, ``post_mspe``, ``ratio``,
    ``gaps``}] sorted by unit id, ``excluded`` [{``unit``, ``reason``}].
``loo``
    ``schema``, ``estimator``, ``window``, ``excluded_donors`` [{``id``,
    ``name``, ``mean_weight``}], ``baseline`` {outcome: effect}, ``runs``
    [{``excluded``, ``effects`` {outcome: effect}, ``errors``}],
    ``aggregates`` {outcome: {``n_runs``, ``mean``, ``sd``, ``min``,
    ``max``}}.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .analysis import EffectSummary, LooStudy, PercentileTable
from .inference import PlaceboStudy, SharpNullDecision
from .panel import INCOME_KEY, PanelDataset
from .pool import DISTANCE_KEY
from .scm import ScmFit, ScmProblem
from .svg import Line, line_chart

__all__ = [
    "Table",
    "dump_json",
    "effect_record",
    "fit_record",
    "fmt_number",
    "loo_record",
    "outcome_label",
    "placebo_record",
    "render_balance_table",
    "render_effects_table",
    "render_gap_figure",
    "render_loo_table",
    "render_path_figure",
    "render_percentile_table",
    "render_placebo_figure",
    "render_pvalue_table",
    "render_weights_table",
    "series_csv",
]

FIT_SCHEMA = "synthcontrol/fit-v1"
PLACEBO_SCHEMA = "synthcontrol/placebo-v1"
LOO_SCHEMA = "synthcontrol/loo-v1"
WEIGHT_THRESHOLD = 0.0005

_COVARIATE_LABELS = {
    "attendance": "Attendance (share)",
    "fte_enrolments": "Enrolments (FTE)",
    "icsea": "ICSEA",
    INCOME_KEY: "Postcode mean taxable income",
    "female_share": "Females (share)",
    "class_size": "Mean class size",
    "lbote_pct": "Non-English language background (share)",
    "first_teacher_year": "Year of first teacher",
}
_OUTCOME_RE = re.compile(r"^([a-z]+)_y(\d+)$")


def outcome_label(key: str) -> str:
    """``numeracy_y3`` -> ``Year-3 Numeracy``; other keys pass through."""
    m = _OUTCOME_RE.match(key)
    return f"Year-{m.group(2)} {m.group(1).capitalize()}" if m else key


def covariate_label(key: str, treated_name: str) -> str:
    if key == DISTANCE_KEY:
        return f"Radial distance for {treated_name}"
    return _COVARIATE_LABELS.get(key, key)


# ---------------------------------------------------------------- JSON

def _clean(x: Any) -> Any:
    if isinstance(x, Mapping):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if hasattr(x, "value") and isinstance(getattr(x, "value"), str):
        return x.value
    return x


def dump_json(obj: Any, path=None) -> str:
    """Deterministic JSON text (non-finite floats become null)."""
    text = json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def effect_record(s: EffectSummary) -> dict:
    return {
        "outcome": s.outcome_key, "window": list(s.window), "years": list(s.years),
        "att_points": s.att_points, "att_sd_units": s.att_sd_units,
        "sd_basis": s.sd_basis, "sd_basis_mode": s.sd_basis_mode, "gaps": list(s.gaps),
    }


def _names(panel: PanelDataset | None, ids) -> list[str]:
    return [panel.unit(u).name if panel is not None else u for u in ids]


def fit_record(problem: ScmProblem, fit: ScmFit, panel: PanelDataset | None = None,
               effects: Sequence[EffectSummary] = ()) -> dict:
    names = _names(panel, problem.pool.members)
    return _clean({
        "schema": FIT_SCHEMA,
        "estimator": fit.estimator.value,
        "outcome": fit.outcome_key,
        "treated": {"id": fit.treated, "name": names[0]},
        "treatment_year": fit.treatment_year,
        "periods": list(fit.periods),
        "donors": [{"id": d, "name": n, "weight": float(w)}
                   for d, n, w in zip(fit.donors, names[1:], fit.weights)],
        "intercept": fit.intercept,
        "importances": None if fit.importances is None
        else dict(zip(problem.covariate_keys, fit.importances.tolist())),
        "observed": fit.observed, "counterfactual": fit.counterfactual, "gaps": fit.gaps,
        "pre_mspe": fit.pre_mspe, "post_mspe": fit.post_mspe,
        "covariates": [
            {"key": k, "label": covariate_label(k, names[0]),
             "treated": float(problem.covariates[i, 0]), "donors": problem.covariates[i, 1:]}
            for i, k in enumerate(problem.covariate_keys)
        ],
        "effects": [effect_record(s) for s in effects],
        "diagnostics": fit.diagnostics,
    })


def placebo_record(study: PlaceboStudy, decision: SharpNullDecision | None = None) -> dict:
    return _clean({
        "schema": PLACEBO_SCHEMA,
        "outcome": study.outcome_key,
        "estimator": study.estimator.value,
        "treatment_year": study.treatment_year,
        "periods": list(study.periods),
        "treated": study.treated.unit,
        "p_value": study.p_value,
        "alpha": None if decision is None else decision.alpha,
        "reject": None if decision is None else decision.reject,
        "n_entries": study.n_entries,
        "entries": [{"unit": e.unit, "pre_mspe": e.pre_mspe, "post_mspe": e.post_mspe,
                     "ratio": e.ratio, "gaps": list(e.gaps)} for e in study.entries],
        "excluded": [{"unit": u, "reason": r} for u, r in study.excluded],
    })


def loo_record(study: LooStudy, panel: PanelDataset | None = None) -> dict:
    names = _names(panel, study.donors)
    return _clean({
        "schema": LOO_SCHEMA,
        "estimator": study.estimator.value,
        "window": list(study.window),
        "excluded_donors": [{"id": d, "name": n, "mean_weight": w}
                            for d, n, w in zip(study.donors, names, study.mean_weights)],
        "baseline": {k: effect_record(s) for k, s in study.baseline.items()},
        "runs": [{"excluded": r.excluded,
                  "effects": {k: effect_record(s) for k, s in r.summaries.items()},
                  "errors": dict(r.errors)} for r in study.results],
        "aggregates": {k: {"n_runs": a.n_runs, "mean": a.mean, "sd": a.sd, "min": a.min, "max": a.max}
                       for k, a in study.aggregates.items()},
    })


# ---------------------------------------------------------------- tables

@dataclass(frozen=True)
class Table:
    title: str
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    notes: tuple[str, ...] = field(default=())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows(self.rows)
        return buf.getvalue()

    def to_json(self) -> str:
        return dump_json({"title": self.title, "columns": list(self.columns),
                          "rows": [list(r) for r in self.rows], "notes": list(self.notes)})

    def write(self, stem) -> None:
        stem = Path(stem)
        stem.with_suffix(".csv").write_text(self.to_csv(), encoding="utf-8")
        stem.with_suffix(".json").write_text(self.to_json(), encoding="utf-8")


def fmt_number(x, digits: int) -> str:
    """Fixed-point text; ``NA`` for missing or non-finite values."""
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "NA"
    return f"{x:.{digits}f}"


def render_weights_table(record: Mapping, threshold: float = WEIGHT_THRESHOLD, digits: int = 3) -> Table:
    """Donors with weight >= ``threshold``, largest first."""
    donors = sorted(record["donors"], key=lambda d: (-d["weight"], d["id"]))
    shown = [d for d in donors if d["weight"] >= threshold]
    rows = tuple((d["name"], fmt_number(d["weight"], digits)) for d in shown)
    notes = []
    omitted = len(donors) - len(shown)
    if omitted:
        notes.append(f"{omitted} donor(s) with weight below {threshold:g} omitted.")
    printed = sum(round(d["weight"], digits) for d in shown)
    if abs(printed - 1.0) > 10 ** (-digits) / 2:
        notes.append("Weights sum to one; printed values may not because of rounding.")
    return Table(f"Schools used to construct Synthetic {record['treated']['name']}",
                 ("School name", "Weight"), rows, tuple(notes))


def render_balance_table(record: Mapping, digits: int = 2) -> Table:
    """Treated covariate values against the weight-averaged donor values."""
    name = record["treated"]["name"]
    w = np.array([d["weight"] for d in record["donors"]])
    rows = []
    for c in record["covariates"]:
        synthetic = float(np.dot(w, np.asarray(c["donors"], dtype=float)))
        rows.append((c["label"], fmt_number(c["treated"], digits), fmt_number(synthetic, digits)))
    return Table(f"Balance between {name} and Synthetic {name}",
                 ("", name, f"Synthetic {name}"), tuple(rows))


def render_effects_table(records: Sequence[Mapping], digits: int = 2) -> Table:
    rows = []
    for r in records:
        for e in r["effects"]:
            rows.append((outcome_label(r["outcome"]), f"{e['window'][0]}-{e['window'][1]}",
                         " ".join(str(y) for y in e["years"]), fmt_number(e["att_points"], digits),
                         fmt_number(e["att_sd_units"], digits), fmt_number(e["sd_basis"], digits), e["sd_basis_mode"]))
    return Table("Average treatment effect on the treated",
                 ("Outcome", "Window", "Years", "ATT (points)", "ATT (s.d.)", "S.d. basis", "Basis"),
                 tuple(rows))


def render_pvalue_table(records: Sequence[Mapping], alpha: float, digits: int = 3) -> Table:
    """Exact p-values arranged subject x year level when keys look like
    ``subject_yN``; otherwise one row per outcome."""
    parsed = [_OUTCOME_RE.match(r["outcome"]) for r in records]
    kept = [r["outcome"] for r in records if r["reject"] is False]
    note = [f"H0: no effect for any unit in any period. Significance level alpha = {alpha:g}."]
    if kept:
        note.append("H0 is not rejected for: " + ", ".join(outcome_label(k) for k in kept) + ".")
    else:
        note.append("H0 is rejected for every outcome.")
    if all(parsed):
        subjects: list[str] = []
        levels: list[int] = []
        cell = {}
        for m, r in zip(parsed, records):
            subj, lvl = m.group(1), int(m.group(2))
            if subj not in subjects:
                subjects.append(subj)
            if lvl not in levels:
                levels.append(lvl)
            cell[(subj, lvl)] = fmt_number(r["p_value"], digits)
        rows = tuple((s.capitalize(), *(cell.get((s, lv), "") for lv in levels)) for s in subjects)
        return Table("Exact p-values for each subject and year level",
                     ("", *(f"Year {lv}" for lv in levels)), rows, tuple(note))
    rows = tuple((r["outcome"], fmt_number(r["p_value"], digits)) for r in records)
    return Table("Exact p-values for each outcome", ("Outcome", "p-value"), rows, tuple(note))


def render_loo_table(record: Mapping, digits: int = 2) -> Table:
    keys = list(record["aggregates"])
    cols, r1, r2, r3 = [], [], [], []
    for k in keys:
        a = record["aggregates"][k]
        cols.append(outcome_label(k))
        r1.append(fmt_number(a["mean"], digits))
        r2.append(f"({fmt_number(a['sd'], digits)})")
        r3.append(f"[{fmt_number(a['min'], digits)}, {fmt_number(a['max'], digits)}]")
    n = len(record["runs"])
    w0, w1 = record["window"]
    notes = (f"Main specification run {n} times, each leaving out one of the top-{n} donors by weight. "
             f"Mean (s.d.) [min, max] of the average effect over {w0}-{w1}.",)
    return Table("Leave-one-out estimates", tuple(cols), (tuple(r1), tuple(r2), tuple(r3)), notes)


def render_percentile_table(table: PercentileTable, panel: PanelDataset | None = None) -> Table:
    units = list(dict.fromkeys(r.unit for r in table.rows))
    cols = ["School name"]
    for k in table.outcome_keys:
        lab = outcome_label(k)
        cols += [f"{lab} Pre", f"{lab} Post", f"{lab} Diff."]
    rows = []
    for u, name in zip(units, _names(panel, units)):
        row = [name]
        for k in table.outcome_keys:
            r = table.lookup(u, k)
            row += [str(r.pre), str(r.post), str(r.difference)]
        rows.append(tuple(row))
    note = (f"Percentile ranks of mean outcomes before {table.split_year} and from {table.split_year} on, "
            f"within a population of {len(table.population)} units.",)
    return Table("Performance percentiles", tuple(cols), tuple(rows), note)


# ---------------------------------------------------------------- figures

def series_csv(rows: Sequence[tuple[str, int, float, str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("unit_id", "year", "value", "role"))
    for u, y, v, role in rows:
        w.writerow((u, y, repr(float(v)), role))
    return buf.getvalue()


def render_path_figure(record: Mapping) -> tuple[str, str]:
    """Treated and synthetic outcome paths. Returns (svg, series csv)."""
    years = record["periods"]
    tid = record["treated"]["id"]
    rows = [(tid, y, v, "treated") for y, v in zip(years, record["observed"])]
    rows += [(tid, y, v, "synthetic") for y, v in zip(years, record["counterfactual"])]
    name = record["treated"]["name"]
    svg = line_chart(
        [Line(years, record["observed"], "#1f4e79", 2.0, label=name),
         Line(years, record["counterfactual"], "#c0504d", 2.0, "6 4", label=f"Synthetic {name}")],
        title=f"{outcome_label(record['outcome'])}: {name} and its synthetic control",
        x_label="Year", y_label="Score", vline=record["treatment_year"],
    )
    return svg, series_csv(rows)


def render_gap_figure(record: Mapping) -> tuple[str, str]:
    years = record["periods"]
    tid = record["treated"]["id"]
    rows = [(tid, y, g, "gap") for y, g in zip(years, record["gaps"])]
    svg = line_chart(
        [Line(years, record["gaps"], "#1f4e79", 2.0, label=record["treated"]["name"])],
        title=f"{outcome_label(record['outcome'])}: gap between treated and synthetic",
        x_label="Year", y_label="Gap (points)", vline=record["treatment_year"], hline=0.0,
    )
    return svg, series_csv(rows)


def render_placebo_figure(record: Mapping) -> tuple[str, str]:
    """Placebo gap spaghetti plot: one polyline per entry, treated on top."""
    years = record["periods"]
    lines, rows = [], []
    treated_line = None
    for e in record["entries"]:
        role = "treated" if e["unit"] == record["treated"] else "placebo"
        rows += [(e["unit"], y, g, role) for y, g in zip(years, e["gaps"])]
        if role == "treated":
            treated_line = Line(years, e["gaps"], "#1f4e79", 2.5, label=e["unit"])
        else:
            lines.append(Line(years, e["gaps"], "#9e9e9e", 1.0, opacity=0.6))
    if treated_line is not None:
        lines.append(treated_line)
    svg = line_chart(
        lines,
        title=f"{outcome_label(record['outcome'])}: placebo gaps (p = {record['p_value']:.3f})",
        x_label="Year", y_label="Gap (points)", vline=record["treatment_year"], hline=0.0,
    )
    return svg, series_csv(rows)
