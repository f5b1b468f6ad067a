"""Command-line front end.

Usage::

    synthcontrol {fit,placebo,loo,sensitivity,simulate,report} --config RUN.toml
                 [--jobs N] [--out DIR] [--seed U64]

Exit status: 0 on success, 1 on a domain error (a JSON error report goes to
stderr), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

from . import report
from .analysis import (
    default_windows,
    leave_one_out,
    percentile_table,
    sd_basis,
    sensitivity_sweep,
    span,
    summarize_effect,
)
from .config import RunConfig, load_config, write_config
from .errors import ConfigError, ScmError, UnknownCovariate, UnknownOutcome
from .inference import run_placebo, test_sharp_null
from .panel import IngestConfig, PanelDataset, join_income, load_income, load_panel
from .pool import DISTANCE_KEY, DonorFilterSpec, DonorPool, build_pool
from .scm import ScmProblem, build_problem, fit
from .simgen import generate, write_dataset

__all__ = ["main"]


# ---------------------------------------------------------------- helpers

class _Writer:
    """Collects the files a command writes and emits a manifest at the end."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[Path] = []
        root.mkdir(parents=True, exist_ok=True)

    def text(self, rel: str, content: str) -> None:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
        self.files.append(path)

    def json(self, rel: str, obj) -> None:
        self.text(rel, report.dump_json(obj))

    def table(self, rel: str, table: report.Table) -> None:
        self.text(rel + ".csv", table.to_csv())
        self.text(rel + ".json", table.to_json())

    def figure(self, rel: str, svg_and_series: tuple[str, str]) -> None:
        svg, series = svg_and_series
        self.text(rel + ".svg", svg)
        self.text(rel + ".csv", series)

    def manifest(self, command: str, cfg: RunConfig) -> None:
        entries = [
            {"path": p.relative_to(self.root).as_posix(),
             "sha256": hashlib.sha256(p.read_bytes()).hexdigest()}
            for p in sorted(set(self.files))
        ]
        self.json("manifest.json", {
            "command": command,
            "fingerprint": cfg.fingerprint(),
            "seed": cfg.seed,
            "files": entries,
        })


@dataclass
class _Context:
    cfg: RunConfig
    panel: PanelDataset
    pool: DonorPool
    problems: dict[str, ScmProblem]


def _schools_header(path: Path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return next(csv.reader(fh), [])


def _prepare(cfg: RunConfig) -> _Context:
    """Load data and validate every referenced key before any fitting."""
    cfg.require_data()
    header = _schools_header(cfg.schools)
    for key in cfg.outcomes:
        if key not in header:
            raise UnknownOutcome(key)
    panel = load_panel(cfg.schools, IngestConfig(
        outcome_keys=cfg.outcomes, attributes_file=cfg.attributes, exclude_years=cfg.exclude_years))
    if cfg.income is not None:
        panel = join_income(panel, load_income(cfg.income))
    panel.unit(cfg.treated)
    for key in cfg.covariates:
        if key != DISTANCE_KEY and key not in panel.covariates:
            raise UnknownCovariate(key)
    spec = cfg.donor_filter or DonorFilterSpec(cfg.treated)
    pool = build_pool(panel, spec)
    problems = {
        key: build_problem(panel, pool, key, cfg.treatment_year, cfg.covariates, cfg.settings)
        for key in cfg.outcomes
    }
    return _Context(cfg, panel, pool, problems)


def _effects(cfg: RunConfig, problem: ScmProblem, f):
    win = default_windows(problem.treatment_year, problem.periods, cfg.strict_offset)
    basis = sd_basis(problem, cfg.sd_basis)
    out = [summarize_effect(f, span(win.full_post), basis)]
    if not win.strict_empty:
        out.append(summarize_effect(f, span(win.strict), basis))
    return out


def _out_dir(cfg: RunConfig, args, sub: str) -> Path:
    root = Path(args.out) if args.out else cfg.output_dir
    return root / sub


# ---------------------------------------------------------------- commands

def cmd_fit(cfg: RunConfig, args) -> int:
    ctx = _prepare(cfg)
    w = _Writer(_out_dir(cfg, args, "fit"))
    records = []
    for key, problem in ctx.problems.items():
        f = fit(problem, cfg.estimator)
        rec = report.fit_record(problem, f, ctx.panel, _effects(cfg, problem, f))
        records.append(rec)
        w.json(f"fit_{key}.json", rec)
        w.table(f"table1_weights_{key}", report.render_weights_table(rec))
        if rec["covariates"]:
            w.table(f"table2_balance_{key}", report.render_balance_table(rec))
        w.figure(f"figures/path_{key}", report.render_path_figure(rec))
        w.figure(f"figures/gap_{key}", report.render_gap_figure(rec))
    w.table("effects", report.render_effects_table(records))
    w.manifest("fit", cfg)
    return 0


def cmd_placebo(cfg: RunConfig, args) -> int:
    ctx = _prepare(cfg)
    w = _Writer(_out_dir(cfg, args, "placebo"))
    records = []
    for key, problem in ctx.problems.items():
        study = run_placebo(ctx.panel, ctx.pool, problem, cfg.placebo_estimator, jobs=args.jobs)
        rec = report.placebo_record(study, test_sharp_null(study, cfg.alpha))
        records.append(rec)
        w.json(f"placebo_{key}.json", rec)
        w.figure(f"figures/placebo_{key}", report.render_placebo_figure(rec))
    w.table("table3_pvalues", report.render_pvalue_table(records, cfg.alpha))
    w.manifest("placebo", cfg)
    return 0


def cmd_loo(cfg: RunConfig, args) -> int:
    ctx = _prepare(cfg)
    w = _Writer(_out_dir(cfg, args, "loo"))
    first = next(iter(ctx.problems.values()))
    win = default_windows(first.treatment_year, first.periods, cfg.strict_offset)
    window = span(win.strict if not win.strict_empty else win.full_post)
    study = leave_one_out(ctx.panel, ctx.pool, ctx.problems, cfg.loo_k, cfg.estimator,
                          window, cfg.sd_basis, jobs=args.jobs)
    rec = report.loo_record(study, ctx.panel)
    w.json("loo.json", rec)
    w.table("table4_loo", report.render_loo_table(rec))
    w.manifest("loo", cfg)
    return 0


def cmd_sensitivity(cfg: RunConfig, args) -> int:
    ctx = _prepare(cfg)
    w = _Writer(_out_dir(cfg, args, "sensitivity"))
    cells = sensitivity_sweep(ctx.problems, cfg.sensitivity, jobs=args.jobs)
    rows = []
    for cell in cells:
        tag = f"{cell.estimator.value}_{cell.outcome_key}"
        if cell.fit is None:
            rows.append({"estimator": cell.estimator.value, "outcome": cell.outcome_key,
                         "error": cell.error})
            continue
        problem = ctx.problems[cell.outcome_key]
        rec = report.fit_record(problem, cell.fit, ctx.panel, _effects(cfg, problem, cell.fit))
        w.json(f"fit_{tag}.json", rec)
        w.figure(f"figures/path_{tag}", report.render_path_figure(rec))
        rows.append({"estimator": cell.estimator.value, "outcome": cell.outcome_key, "error": None,
                     "pre_mspe": rec["pre_mspe"], "effects": rec["effects"]})
    w.json("summary.json", rows)
    table = report.Table(
        "Average effect by estimator",
        ("Estimator", "Outcome", "Pre MSPE", "ATT full", "ATT strict", "Error"),
        tuple(_sensitivity_row(r) for r in rows),
    )
    w.table("table_sensitivity", table)
    w.manifest("sensitivity", cfg)
    return 0


def _sensitivity_row(r: dict) -> tuple[str, ...]:
    atts = [report.fmt_number(e["att_points"], 2) for e in (r.get("effects") or [])[:2]]
    atts += [""] * (2 - len(atts))
    return (r["estimator"], report.outcome_label(r["outcome"]),
            report.fmt_number(r.get("pre_mspe"), 4), *atts, r["error"] or "")


def cmd_simulate(cfg: RunConfig, args) -> int:
    if cfg.simulate is None:
        raise ConfigError("config has no [simulate] section")
    root = Path(args.out) if args.out else cfg.simulate_out
    panel, truth = generate(cfg.simulate)
    paths = write_dataset(panel, truth, root)
    # a ready-to-run config for the generated files
    raw = {k: v for k, v in cfg.raw.items() if k not in ("simulate", "data", "output")}
    raw["seed"] = cfg.seed
    raw["data"] = {"schools": paths["schools"].name, "attributes": paths["attributes"].name}
    if "income" in paths:
        raw["data"]["income"] = paths["income"].name
    design = dict(raw.get("design", {}))
    design.setdefault("treated", cfg.simulate.treated_id)
    design.setdefault("treatment_year", cfg.simulate.treatment_year)
    design.setdefault("outcomes", list(cfg.simulate.outcome_keys))
    if not cfg.simulate.covariates:
        design["covariates"] = []
    raw["design"] = design
    raw["output"] = {"dir": "out"}
    w = _Writer(root)
    w.files.extend(paths.values())
    write_config(raw, root / "config.toml")
    w.files.append(root / "config.toml")
    w.manifest("simulate", cfg)
    return 0


def _read_records(directory: Path, pattern: str) -> list[dict]:
    return [json.loads(p.read_text(encoding="utf-8")) for p in sorted(directory.glob(pattern))]


def cmd_report(cfg: RunConfig, args) -> int:
    """Re-render every table and figure from saved JSON, plus percentiles."""
    root = Path(args.out) if args.out else cfg.output_dir
    fits = _read_records(root / "fit", "fit_*.json")
    placebos = _read_records(root / "placebo", "placebo_*.json")
    loo = _read_records(root / "loo", "loo.json")
    if not (fits or placebos or loo):
        raise ConfigError(f"no saved results under {root}; run fit, placebo or loo first")
    order = {k: i for i, k in enumerate(cfg.outcomes)}
    fits.sort(key=lambda r: order.get(r["outcome"], len(order)))
    placebos.sort(key=lambda r: order.get(r["outcome"], len(order)))
    w = _Writer(root / "report")
    for rec in fits:
        key = rec["outcome"]
        w.table(f"table1_weights_{key}", report.render_weights_table(rec))
        if rec["covariates"]:
            w.table(f"table2_balance_{key}", report.render_balance_table(rec))
        w.figure(f"figures/path_{key}", report.render_path_figure(rec))
        w.figure(f"figures/gap_{key}", report.render_gap_figure(rec))
    if fits:
        w.table("effects", report.render_effects_table(fits))
    for rec in placebos:
        w.figure(f"figures/placebo_{rec['outcome']}", report.render_placebo_figure(rec))
    if placebos:
        alpha = placebos[0]["alpha"] if placebos[0]["alpha"] is not None else cfg.alpha
        w.table("table3_pvalues", report.render_pvalue_table(placebos, alpha))
    if loo:
        w.table("table4_loo", report.render_loo_table(loo[0]))

    ctx = _prepare(cfg)
    population = ctx.pool.members if cfg.percentile_population == "pool" else ctx.panel.unit_ids
    units = [ctx.pool.treated]
    if fits:
        shown = sorted((d for d in fits[0]["donors"] if d["weight"] >= report.WEIGHT_THRESHOLD),
                       key=lambda d: (-d["weight"], d["id"]))
        units += [d["id"] for d in shown]
    split = min(p for p in ctx.panel.periods if p >= cfg.treatment_year)
    table = percentile_table(ctx.panel, population, cfg.outcomes, split, units)
    w.table("table5_percentiles", report.render_percentile_table(table, ctx.panel))
    w.manifest("report", cfg)
    return 0


COMMANDS: dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "fit": cmd_fit,
    "placebo": cmd_placebo,
    "loo": cmd_loo,
    "sensitivity": cmd_sensitivity,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthcontrol", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "fit": "fit the configured estimator on every outcome",
        "placebo": "placebo permutation study and exact p-values",
        "loo": "leave-one-out refits over the top-weighted donors",
        "sensitivity": "compare alternative estimators on every outcome",
        "simulate": "write a synthetic panel with a known effect",
        "report": "re-render tables and figures from saved results",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, metavar="PATH", help="run configuration (TOML)")
        p.add_argument("--jobs", type=_positive, default=1, metavar="N", help="worker processes (default 1)")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
        p.add_argument("--seed", type=_u64, metavar="U64", help="random seed (overrides the config)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed)
        return COMMANDS[args.command](cfg, args)
    except (ScmError, ValueError, KeyError) as err:
        detail = err.details() if isinstance(err, ScmError) else {}
        msg = str(err) if not isinstance(err, KeyError) else str(err.args[0])
        print(json.dumps({"error": type(err).__name__, "message": msg, "details": detail},
                         sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
