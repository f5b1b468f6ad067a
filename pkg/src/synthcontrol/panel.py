"""Immutable unit-by-period panel store with file I/O and covariate collapsing.

Missing cells are represented by the mask of a :class:`numpy.ma.MaskedArray`;
the value stored under a masked cell is ``0.0`` and never read. Periods are
calendar years kept in a strictly increasing tuple, so a dropped year (2020 in
the NAPLAN data) is simply absent from the index.
"""

from __future__ import annotations

import csv
import enum
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

from .errors import (
    AllMissing,
    DuplicateObservation,
    EmptyPanel,
    EmptyWindow,
    MalformedRow,
    NonNumericCell,
    UnknownCovariate,
    UnknownKey,
    UnknownOutcome,
    UnknownUnit,
)

__all__ = [
    "INCOME_KEY",
    "NAPLAN_OUTCOMES",
    "CovariateKind",
    "CovariateSeries",
    "IncomeTable",
    "IngestConfig",
    "PanelDataset",
    "UnitRecord",
    "collapse_covariate",
    "drop_period",
    "join_income",
    "load_income",
    "load_panel",
    "write_income",
    "write_panel",
]

INCOME_KEY = "postcode-mean-income"
NAPLAN_OUTCOMES = ("reading_y3", "reading_y5", "numeracy_y3", "numeracy_y5")
_ID_COLUMNS = ("unit_id", "unit_name", "year")
_TRUE = {"true", "1", "yes", "y", "t"}
_FALSE = {"false", "0", "no", "n", "f"}

Attribute = str | float | bool


def _frozen(values: np.ndarray, mask: np.ndarray) -> np.ma.MaskedArray:
    values = np.array(values, dtype=float)
    mask = np.array(mask, dtype=bool)
    values[mask] = 0.0
    values.flags.writeable = False
    mask.flags.writeable = False
    return np.ma.MaskedArray(values, mask=mask, copy=False)


@dataclass(frozen=True)
class UnitRecord:
    id: str
    name: str
    attributes: Mapping[str, Attribute] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "attributes", MappingProxyType(dict(self.attributes)))
        lat = self.attributes.get("latitude")
        lon = self.attributes.get("longitude")
        if lat is not None and not -90.0 <= float(lat) <= 90.0:
            raise ValueError(f"unit {self.id}: latitude {lat} outside [-90, 90]")
        if lon is not None and not -180.0 <= float(lon) <= 180.0:
            raise ValueError(f"unit {self.id}: longitude {lon} outside [-180, 180]")

    def __reduce__(self):
        return (UnitRecord, (self.id, self.name, dict(self.attributes)))


class CovariateKind(enum.Enum):
    FIXED = "fixed"
    TIME_VARYING = "time-varying"


@dataclass(frozen=True, eq=False)
class CovariateSeries:
    kind: CovariateKind
    values: np.ma.MaskedArray  # (units,) when FIXED, (units, periods) when TIME_VARYING

    def __post_init__(self):
        ndim = 1 if self.kind is CovariateKind.FIXED else 2
        if np.ndim(self.values) != ndim:
            raise ValueError(f"{self.kind.value} covariate needs a {ndim}-d array")

    @classmethod
    def fixed(cls, values, mask=None) -> CovariateSeries:
        values = np.asarray(values, dtype=float)
        mask = np.zeros(values.shape, bool) if mask is None else mask
        return cls(CovariateKind.FIXED, _frozen(values, mask))

    @classmethod
    def time_varying(cls, values, mask=None) -> CovariateSeries:
        values = np.asarray(values, dtype=float)
        mask = np.zeros(values.shape, bool) if mask is None else mask
        return cls(CovariateKind.TIME_VARYING, _frozen(values, mask))

    def __reduce__(self):
        # rebuild through _frozen so unpickled copies stay read-only
        return (_restore_series, (self.kind, np.asarray(self.values.data), np.ma.getmaskarray(self.values)))


def _restore_series(kind: CovariateKind, values, mask) -> CovariateSeries:
    return CovariateSeries(kind, _frozen(values, mask))


@dataclass(frozen=True, eq=False)
class PanelDataset:
    units: tuple[UnitRecord, ...]
    periods: tuple[int, ...]
    outcomes: Mapping[str, np.ma.MaskedArray]
    covariates: Mapping[str, CovariateSeries] = field(default_factory=dict)

    def __post_init__(self):
        units = tuple(self.units)
        periods = tuple(int(p) for p in self.periods)
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "periods", periods)
        if any(b <= a for a, b in zip(periods, periods[1:])):
            raise ValueError("periods must be strictly increasing")
        ids = [u.id for u in units]
        if len(set(ids)) != len(ids):
            raise ValueError("unit identifiers must be unique")
        shape = (len(units), len(periods))
        outcomes = {}
        for key, mat in self.outcomes.items():
            if not isinstance(mat, np.ma.MaskedArray):
                mat = _frozen(mat, np.zeros(np.shape(mat), bool))
            elif mat.data.flags.writeable:
                mat = _frozen(mat.data, np.ma.getmaskarray(mat))
            if mat.shape != shape:
                raise ValueError(f"outcome {key!r} has shape {mat.shape}, expected {shape}")
            outcomes[key] = mat
        for key, cov in self.covariates.items():
            want = shape[:1] if cov.kind is CovariateKind.FIXED else shape
            if cov.values.shape != want:
                raise ValueError(f"covariate {key!r} has shape {cov.values.shape}, expected {want}")
        object.__setattr__(self, "outcomes", MappingProxyType(outcomes))
        object.__setattr__(self, "covariates", MappingProxyType(dict(self.covariates)))
        object.__setattr__(self, "_unit_pos", {u: i for i, u in enumerate(ids)})

    def __reduce__(self):
        return (PanelDataset, (self.units, self.periods, dict(self.outcomes), dict(self.covariates)))

    @property
    def unit_ids(self) -> tuple[str, ...]:
        return tuple(u.id for u in self.units)

    @property
    def n_units(self) -> int:
        return len(self.units)

    def unit_index(self, unit_id: str) -> int:
        try:
            return self._unit_pos[unit_id]
        except KeyError:
            raise UnknownUnit(unit_id) from None

    def unit(self, unit_id: str) -> UnitRecord:
        return self.units[self.unit_index(unit_id)]

    def period_index(self, year: int) -> int:
        try:
            return self.periods.index(int(year))
        except ValueError:
            raise KeyError(f"year {year} not in period index") from None

    def outcome(self, key: str) -> np.ma.MaskedArray:
        try:
            return self.outcomes[key]
        except KeyError:
            raise UnknownOutcome(key) from None

    def covariate(self, key: str) -> CovariateSeries:
        try:
            return self.covariates[key]
        except KeyError:
            raise UnknownCovariate(key) from None

    def window_positions(self, window: tuple[int, int] | None) -> np.ndarray:
        """Column positions of index years inside the inclusive ``window``."""
        if window is None:
            return np.arange(len(self.periods))
        start, end = window
        pos = [i for i, y in enumerate(self.periods) if start <= y <= end]
        if not pos:
            raise EmptyWindow(f"window {start}-{end} contains no index years")
        return np.array(pos, dtype=int)

    def with_covariate(self, key: str, series: CovariateSeries) -> PanelDataset:
        covariates = dict(self.covariates)
        covariates[key] = series
        return PanelDataset(self.units, self.periods, self.outcomes, covariates)


@dataclass(frozen=True)
class IngestConfig:
    outcome_keys: tuple[str, ...] = NAPLAN_OUTCOMES
    attributes_file: Path | str | None = None
    exclude_years: tuple[int, ...] = ()
    string_attributes: tuple[str, ...] = ("postcode", "remoteness", "grade_span")
    bool_attributes: tuple[str, ...] = ("coeducational",)
    missing: str = ""
    delimiter: str = ","


def _parse_number(text: str, path, line: int, column: str, missing: str):
    if text == missing:
        return None
    try:
        value = float(text)
    except ValueError:
        raise NonNumericCell(path, line, f"non-numeric value {text!r} in column {column!r}") from None
    if not np.isfinite(value):
        raise NonNumericCell(path, line, f"non-finite value {text!r} in column {column!r}")
    return value


def _read_rows(path, delimiter: str):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(path, 1, "missing header row") from None
        rows = [(reader.line_num, row) for row in reader if row]
    return [h.strip() for h in header], rows


def _load_attributes(path, config: IngestConfig, known: dict[str, int]):
    header, rows = _read_rows(path, config.delimiter)
    if not header or header[0] != "unit_id":
        raise MalformedRow(path, 1, "attributes header must start with 'unit_id'")
    attrs: dict[str, dict[str, Attribute]] = {}
    for line, row in rows:
        if len(row) != len(header):
            raise MalformedRow(path, line, f"expected {len(header)} fields, found {len(row)}")
        uid = row[0]
        if uid not in known:
            raise MalformedRow(path, line, f"unit {uid!r} absent from schools file")
        if uid in attrs:
            raise DuplicateObservation((uid,), line)
        rec: dict[str, Attribute] = {}
        for col, text in zip(header[1:], row[1:]):
            if text == config.missing:
                continue
            if col in config.string_attributes:
                rec[col] = text
            elif col in config.bool_attributes:
                low = text.strip().lower()
                if low not in _TRUE | _FALSE:
                    raise MalformedRow(path, line, f"non-boolean value {text!r} in column {col!r}")
                rec[col] = low in _TRUE
            else:
                try:
                    rec[col] = float(text)
                except ValueError:
                    rec[col] = text
        attrs[uid] = rec
    return header[1:], attrs


def load_panel(schools_file, config: IngestConfig | None = None) -> PanelDataset:
    """Read the long-format schools file (and optional attributes file).

    Every numeric static attribute becomes a fixed covariate; every column of
    the schools file that is not an identifier or an outcome becomes a
    time-varying covariate.
    """
    config = config or IngestConfig()
    path = Path(schools_file)
    header, rows = _read_rows(path, config.delimiter)
    if tuple(header[:3]) != _ID_COLUMNS:
        raise MalformedRow(path, 1, f"header must start with {','.join(_ID_COLUMNS)}")
    missing_cols = [k for k in config.outcome_keys if k not in header]
    if missing_cols:
        raise MalformedRow(path, 1, f"header lacks outcome columns {missing_cols}")
    if len(set(header)) != len(header):
        raise MalformedRow(path, 1, "duplicate column names in header")
    value_cols = header[3:]
    covariate_cols = [c for c in value_cols if c not in config.outcome_keys]
    excluded = set(config.exclude_years)

    names: dict[str, str] = {}
    cells: dict[tuple[str, int], list] = {}
    for line, row in rows:
        if len(row) != len(header):
            raise MalformedRow(path, line, f"expected {len(header)} fields, found {len(row)}")
        uid, name, year_text = row[0], row[1], row[2]
        if not uid:
            raise MalformedRow(path, line, "empty unit_id")
        try:
            year = int(year_text)
        except ValueError:
            raise MalformedRow(path, line, f"invalid year {year_text!r}") from None
        if (uid, year) in cells:
            raise DuplicateObservation((uid, year), line)
        if names.setdefault(uid, name) != name:
            raise MalformedRow(path, line, f"unit {uid!r} has inconsistent names")
        values = [_parse_number(t, path, line, c, config.missing) for c, t in zip(value_cols, row[3:])]
        cells[(uid, year)] = values

    unit_ids = list(names)
    upos = {u: i for i, u in enumerate(unit_ids)}
    periods = sorted({y for _, y in cells} - excluded)
    ppos = {y: j for j, y in enumerate(periods)}
    shape = (len(unit_ids), len(periods))
    data = {c: np.zeros(shape) for c in value_cols}
    mask = {c: np.ones(shape, bool) for c in value_cols}
    for (uid, year), values in cells.items():
        if year in excluded:
            continue
        i, j = upos[uid], ppos[year]
        for c, v in zip(value_cols, values):
            if v is not None:
                data[c][i, j] = v
                mask[c][i, j] = False

    attrs: dict[str, dict[str, Attribute]] = {}
    attr_cols: list[str] = []
    if config.attributes_file is not None:
        attr_cols, attrs = _load_attributes(config.attributes_file, config, upos)
    units = [UnitRecord(u, names[u], attrs.get(u, {})) for u in unit_ids]

    covariates: dict[str, CovariateSeries] = {}
    for col in attr_cols:
        if col in config.string_attributes or col in config.bool_attributes:
            continue
        vals = [u.attributes.get(col) for u in units]
        if any(isinstance(v, str) for v in vals):
            continue
        covariates[col] = CovariateSeries.fixed(
            [0.0 if v is None else v for v in vals], [v is None for v in vals]
        )
    for col in covariate_cols:
        covariates[col] = CovariateSeries.time_varying(data[col], mask[col])
    outcomes = {k: _frozen(data[k], mask[k]) for k in config.outcome_keys}
    return PanelDataset(tuple(units), tuple(periods), outcomes, covariates)


def _fmt(value: float, masked: bool) -> str:
    return "" if masked else repr(float(value))


def write_panel(panel: PanelDataset, schools_file, attributes_file=None) -> None:
    """Write ``panel`` in the format :func:`load_panel` reads."""
    tv = [k for k, c in panel.covariates.items() if c.kind is CovariateKind.TIME_VARYING]
    cols = list(panel.outcomes) + tv
    arrays = [panel.outcomes[k] for k in panel.outcomes] + [panel.covariates[k].values for k in tv]
    with open(schools_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(_ID_COLUMNS) + cols)
        for i, unit in enumerate(panel.units):
            for j, year in enumerate(panel.periods):
                row = [unit.id, unit.name, str(year)]
                row += [_fmt(a.data[i, j], bool(np.ma.getmaskarray(a)[i, j])) for a in arrays]
                w.writerow(row)
    if attributes_file is None:
        return
    keys: list[str] = []
    for unit in panel.units:
        keys += [k for k in unit.attributes if k not in keys]
    with open(attributes_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id"] + keys)
        for unit in panel.units:
            row = [unit.id]
            for k in keys:
                v = unit.attributes.get(k)
                if v is None:
                    row.append("")
                elif isinstance(v, bool):
                    row.append("true" if v else "false")
                elif isinstance(v, float):
                    row.append(repr(v))
                else:
                    row.append(str(v))
            w.writerow(row)


@dataclass(frozen=True)
class IncomeTable:
    rows: tuple[tuple[str, int, float], ...]

    def __post_init__(self):
        rows = tuple((str(p), int(y), float(v)) for p, y, v in self.rows)
        object.__setattr__(self, "rows", rows)
        seen = set()
        for p, y, _ in rows:
            if (p, y) in seen:
                raise DuplicateObservation((p, y))
            seen.add((p, y))

    def lookup(self) -> dict[tuple[str, int], float]:
        return {(p, y): v for p, y, v in self.rows}


def load_income(path, delimiter: str = ",") -> IncomeTable:
    header, rows = _read_rows(path, delimiter)
    if header[:3] != ["postcode", "year", "mean_taxable_income"]:
        raise MalformedRow(path, 1, "header must be postcode,year,mean_taxable_income")
    out = []
    seen: set[tuple[str, int]] = set()
    for line, row in rows:
        if len(row) != len(header):
            raise MalformedRow(path, line, f"expected {len(header)} fields, found {len(row)}")
        try:
            key = (row[0], int(row[1]))
        except ValueError:
            raise MalformedRow(path, line, f"invalid year {row[1]!r}") from None
        if key in seen:
            raise DuplicateObservation(key, line)
        seen.add(key)
        value = _parse_number(row[2], path, line, "mean_taxable_income", "")
        if value is None:
            raise MalformedRow(path, line, "empty income value")
        out.append((key[0], key[1], value))
    return IncomeTable(tuple(out))


def write_income(table: IncomeTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["postcode", "year", "mean_taxable_income"])
        for p, y, v in table.rows:
            w.writerow([p, y, repr(v)])


def join_income(panel: PanelDataset, income: IncomeTable) -> PanelDataset:
    """Attach postcode-level mean taxable income as a time-varying covariate."""
    lookup = income.lookup()
    shape = (panel.n_units, len(panel.periods))
    values = np.zeros(shape)
    mask = np.ones(shape, bool)
    for i, unit in enumerate(panel.units):
        postcode = unit.attributes.get("postcode")
        if postcode is None:
            raise UnknownKey("attribute", f"postcode (unit {unit.id})")
        for j, year in enumerate(panel.periods):
            v = lookup.get((str(postcode), year))
            if v is not None:
                values[i, j] = v
                mask[i, j] = False
    return panel.with_covariate(INCOME_KEY, CovariateSeries.time_varying(values, mask))


def drop_period(panel: PanelDataset, year: int) -> PanelDataset:
    if year not in panel.periods:
        return panel
    if len(panel.periods) == 1:
        raise EmptyPanel(f"dropping {year} would leave no periods")
    j = panel.periods.index(year)
    keep = [k for k in range(len(panel.periods)) if k != j]

    def cut(a: np.ma.MaskedArray) -> np.ma.MaskedArray:
        return _frozen(a.data[:, keep], np.ma.getmaskarray(a)[:, keep])

    outcomes = {k: cut(v) for k, v in panel.outcomes.items()}
    covariates = {
        k: c if c.kind is CovariateKind.FIXED else CovariateSeries(c.kind, cut(c.values))
        for k, c in panel.covariates.items()
    }
    periods = tuple(p for p in panel.periods if p != year)
    return PanelDataset(panel.units, periods, outcomes, covariates)


def collapse_covariate(
    panel: PanelDataset, key: str, window: tuple[int, int] | None = None
) -> np.ndarray:
    """Per-unit value of covariate ``key``.

    Fixed covariates are returned as stored. Time-varying covariates are
    averaged over the observed cells whose year lies in the inclusive
    ``window`` (the whole index when ``None``).
    """
    series = panel.covariate(key)
    if series.kind is CovariateKind.FIXED:
        mask = np.ma.getmaskarray(series.values)
        if mask.any():
            raise AllMissing(key, [panel.units[i].id for i in np.flatnonzero(mask)])
        return np.array(series.values.data, dtype=float)
    pos = panel.window_positions(window)
    block = series.values[:, pos]
    counts = block.count(axis=1)
    if np.any(counts == 0):
        raise AllMissing(key, [panel.units[i].id for i in np.flatnonzero(counts == 0)])
    return np.asarray(block.mean(axis=1).filled(np.nan), dtype=float)


def outcome_block(panel: PanelDataset, key: str, unit_ids: Sequence[str]) -> np.ma.MaskedArray:
    """Rows of outcome ``key`` for ``unit_ids`` in the given order."""
    mat = panel.outcome(key)
    rows = [panel.unit_index(u) for u in unit_ids]
    return mat[rows]
