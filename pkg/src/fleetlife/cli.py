"""``fleetlife`` command line.

Exit status: 0 on success, 1 on usage errors, 2 on data or validation errors.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import build_calibration_pairs, fit_isotonic
from .config import read_config
from .dataset import (
    CleaningConfig,
    CsvSchema,
    PredictionWindow,
    add_months,
    clean,
    load_csv,
    restrict_to_window,
    write_csv,
)
from .exceptions import FleetlifeError, RowParseError
from .forecast import forecast_window
from .harness import ExperimentPlan, evaluation_grid, run_plan, usable_columns
from .metrics import BRIER_MODES, evaluate_model, format_table
from .models import DISPLAY_NAMES, canonical_kind, fit_model, load_model, save_model
from .synth import FleetConfig, GroundTruth, generate_fleet

logger = logging.getLogger("fleetlife")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="key-value configuration file for this command")
    p.add_argument("--seed", type=int, help="random seed (randomized steps are reproducible per seed)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads (default: all cores)")
    p.add_argument("--quiet", action="store_true", help="print only a JSON summary on stdout")
    p.add_argument("--mode", choices=BRIER_MODES, default="ipcw", help="Brier score weighting")
    p.add_argument("--schema", type=Path, help="key-value file mapping CSV column names")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="fleetlife", description="Survival models and failure forecasts for equipment fleets.")
    parser.add_argument("--version", action="version", version=f"fleetlife {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic fleet and its ground truth")
    p.add_argument("--out", type=Path, required=True, help="fleet CSV to write")
    p.add_argument("--truth", type=Path, help="ground-truth JSON to write")
    p.add_argument("--n-subjects", type=int)

    p = sub.add_parser("clean", parents=[common], help="apply the cleaning rules")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--report", type=Path, help="CSV with removal counts per rule")

    p = sub.add_parser("fit", parents=[common], help="fit a survival model")
    p.add_argument("--model", required=True, help="km, cox, gb_cox, rsf or weibull_aft")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="model JSON to write")
    p.add_argument("--cutoff", help="fit only on what was known at this date (YYYY-MM-DD)")

    p = sub.add_parser("calibrate", parents=[common], help="fit an isotonic map on a resolved past window")
    p.add_argument("--model", type=Path, required=True, help="model JSON fitted at the past window's start")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--t0", required=True)
    p.add_argument("--t1", required=True)
    p.add_argument("--out", type=Path, required=True, help="model JSON with the map embedded")
    p.add_argument("--pairs", type=Path, help="CSV of calibration pairs")

    p = sub.add_parser("forecast", parents=[common], help="expected failures in a window")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--t0", required=True)
    p.add_argument("--t1", required=True)
    p.add_argument("--out", type=Path, required=True, help="per-unit probabilities CSV")
    p.add_argument("--summary", type=Path, help="summary JSON")
    p.add_argument("--no-calibration", action="store_true", help="ignore a map embedded in the model")

    p = sub.add_parser("evaluate", parents=[common], help="CI and IBS of a model on held-out data")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, help="metrics JSON")
    p.add_argument("--grid-points", type=int, default=100)

    p = sub.add_parser("run-plan", parents=[common], help="rolling-window experiment")
    p.add_argument("--plan", type=Path, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path, help="cleaned fleet CSV")
    src.add_argument("--fleet", type=Path, help="fleet configuration: generate the data instead")
    p.add_argument("--truth", type=Path, help="ground-truth JSON for --data")
    p.add_argument("--report", type=Path, required=True, help="output directory")
    return parser


def _schema(args) -> CsvSchema:
    return CsvSchema.from_mapping(read_config(args.schema)) if args.schema else CsvSchema()


def _window(args) -> PredictionWindow:
    try:
        return PredictionWindow(args.t0, args.t1)
    except ValueError as exc:
        raise UsageError(f"bad window: {exc}") from exc


def _hyper(args) -> dict:
    return read_config(args.config) if args.config else {}


def cmd_generate(args):
    cfg = FleetConfig.from_file(args.config, seed=args.seed, n_subjects=args.n_subjects) if args.config else \
        FleetConfig(**{k: v for k, v in (("seed", args.seed), ("n_subjects", args.n_subjects)) if v is not None})
    ds, gt = generate_fleet(cfg)
    write_csv(ds, args.out)
    if args.truth:
        gt.write_json(args.truth)
    return {"records": len(ds), "censoring_rate": ds.censoring_rate, "install_span_days": gt.install_span_days,
            "out": str(args.out)}


def cmd_clean(args):
    cfg = CleaningConfig.from_file(args.config) if args.config else CleaningConfig()
    out, report = clean(load_csv(args.data, _schema(args)), cfg)
    write_csv(out, args.out)
    if args.report:
        report.to_csv(args.report)
    logger.info("%s", report.to_text())
    return {"n_input": report.n_input, "n_output": report.n_output, "removed": dict(report.removed),
            "storage_flagged": report.storage_flagged}


def cmd_fit(args):
    kind = canonical_kind(args.model)
    ds = load_csv(args.train, _schema(args))
    if args.cutoff:
        try:
            t0 = dt.date.fromisoformat(args.cutoff)
        except ValueError as exc:
            raise UsageError(f"bad --cutoff: {exc}") from exc
        ds, _ = restrict_to_window(ds, PredictionWindow(t0, add_months(t0, 12)))
    model = fit_model(kind, ds, _hyper(args), seed=args.seed or 0, columns=usable_columns(ds, kind) or None,
                      n_jobs=args.threads)
    save_model(model, args.out)
    return {"model": kind, "records": len(ds), "events": ds.n_events, "columns": list(model.columns),
            "out": str(args.out)}


def cmd_calibrate(args):
    w = _window(args)
    model, _ = load_model(args.model)
    train, truth = restrict_to_window(load_csv(args.data, _schema(args)), w)
    fc = forecast_window(model, train, w)
    pairs = build_calibration_pairs(fc.per_subject, truth, w)
    m = fit_isotonic(pairs)
    save_model(model, args.out, calibration=m)
    if args.pairs:
        with open(args.pairs, "w", encoding="utf-8") as fh:
            fh.write("p,y,w\n")
            fh.writelines(f"{q.p!r},{q.y},{q.w!r}\n" for q in pairs)
    return {"pairs": len(pairs), "failures": int(sum(q.y for q in pairs)), "breakpoints": int(m.breakpoints.size),
            "out": str(args.out)}


def cmd_forecast(args):
    w = _window(args)
    model, calibration = load_model(args.model)
    train, _ = restrict_to_window(load_csv(args.data, _schema(args)), w)
    fc = forecast_window(model, train, w, calibration=None if args.no_calibration else calibration)
    fc.to_csv(args.out)
    if args.summary:
        fc.write_summary(args.summary)
    return fc.summary() | {"diagnostics": {"excluded_zero_survival": len(fc.excluded)}}


def cmd_evaluate(args):
    model, _ = load_model(args.model)
    ds = load_csv(args.data, _schema(args))
    grid = evaluation_grid(ds, args.grid_points)
    if grid is None:
        raise FleetlifeError(f"{args.data}: no events to evaluate against")
    report = evaluate_model(model, ds, grid, mode=args.mode, name=DISPLAY_NAMES[model.kind],
                            ci_applicable=model.kind != "km")
    if args.out:
        args.out.write_text(report.to_json(), encoding="utf-8")
    logger.info("\n%s", format_table([(report.model, report.ci, report.ibs)]))
    return {"model": report.model, "ci": report.ci, "ibs": report.ibs, "mode": report.mode,
            "n_comparable_pairs": report.n_comparable_pairs}


def cmd_run_plan(args):
    plan = ExperimentPlan.from_file(args.plan, seed=args.seed, mode=args.mode if args.mode != "ipcw" else None)
    cleaning = CleaningConfig.from_file(args.config) if args.config else None
    if args.fleet:
        if args.truth:
            raise UsageError("--truth only applies with --data")
        source = FleetConfig.from_file(args.fleet)
        gt = None
    else:
        source = load_csv(args.data, _schema(args))
        gt = GroundTruth.read_json(args.truth) if args.truth else None
    report = run_plan(plan, source, ground_truth=gt, cleaning=cleaning, n_jobs=args.threads)
    paths = report.write(args.report)
    logger.info("\n%s", report.metrics_table())
    return {"cells": len(report.cells), "scored": len(report.scored_cells),
            "skipped": len(report.cells) - len(report.scored_cells),
            "mape_by_model": report.mape_by_model(), "files": {k: str(v) for k, v in paths.items()}}


COMMANDS = {
    "generate": cmd_generate,
    "clean": cmd_clean,
    "fit": cmd_fit,
    "calibrate": cmd_calibrate,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "run-plan": cmd_run_plan,
}


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    if args.threads < 1:
        parser.print_usage(sys.stderr)
        print("fleetlife: error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        summary = COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fleetlife: error: {exc}", file=sys.stderr)
        return 1
    except RowParseError as exc:
        print(f"fleetlife: data error: {len(exc.rows)} invalid row(s)", file=sys.stderr)
        for row, msg in exc.rows[:20]:
            print(f"  row {row}: {msg}", file=sys.stderr)
        return 2
    except (FleetlifeError, ValueError) as exc:
        print(f"fleetlife: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"fleetlife: {exc}", file=sys.stderr)
        return 2
    text = json.dumps(summary, sort_keys=True, default=_json_default)
    if args.quiet:
        print(text)
    else:
        print(f"{args.command}: {text}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
