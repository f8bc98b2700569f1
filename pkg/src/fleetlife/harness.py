"""Rolling-window backtests: model x calibration x window cells, plus CI/IBS tables.

Each cell fits one model on the state of the fleet known at a window's
start, forecasts the number of failures in the window and scores the
forecast against the actual count. Calibrated cells fit an isotonic map
on an earlier window whose outcome is fully known at the current start.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .calibration import build_calibration_pairs, fit_isotonic
from .config import nested, read_config
from .dataset import (
    CleaningConfig,
    Dataset,
    PredictionWindow,
    add_months,
    clean,
    restrict_to_window,
    rolling_windows,
)
from .exceptions import (
    EmptyRiskSetError,
    FleetlifeError,
    InsufficientDataError,
    LeakError,
    ParameterError,
    SearchError,
)
from .forecast import FailureForecast, calibrate_forecast, forecast_window
from .metrics import BRIER_MODES, brier_curve, concordance_index, integrate_brier, format_table
from .models import DISPLAY_NAMES, RANDOMIZED, canonical_kind, fit_model
from .synth import FleetConfig, GroundTruth, generate_fleet, true_window_failures

logger = logging.getLogger(__name__)

CALIBRATION_CHOICES = ("off", "on", "both")
CALIBRATION_SOURCES = ("lagged", "previous")


@dataclass(frozen=True)
class ExperimentPlan:
    """What to run.

    ``calibration`` maps each model kind to ``off``, ``on`` or ``both``.
    ``calibration_source`` picks the window the isotonic map is fitted on:
    ``lagged`` uses the window of the same length that ends at ``t0`` (fully
    resolved at forecast time, so always available); ``previous`` uses the
    preceding window of the plan and skips the first window's calibrated
    cells.
    """

    windows: tuple[PredictionWindow, ...]
    models: tuple[str, ...]
    calibration: Mapping[str, str] = field(default_factory=dict)
    repeats: int = 5
    overrides: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    seed: int = 0
    k_folds: int = 10
    mode: str = "ipcw"
    probability_scale: float = 1.0
    calibration_source: str = "lagged"
    evaluate: bool = True

    def __post_init__(self):
        if not self.windows:
            raise ParameterError("a plan needs at least one window")
        if not self.models:
            raise ParameterError("a plan needs at least one model")
        models = tuple(dict.fromkeys(canonical_kind(m) for m in self.models))
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "windows", tuple(self.windows))
        if isinstance(self.calibration, str):
            object.__setattr__(self, "calibration", {m: self.calibration for m in models})
        cal = {canonical_kind(k): str(v).lower() for k, v in self.calibration.items()}
        for k, v in cal.items():
            if v not in CALIBRATION_CHOICES:
                raise ParameterError(f"calibration for {k} must be one of {CALIBRATION_CHOICES}, got {v!r}")
        object.__setattr__(self, "calibration", {m: cal.get(m, "both") for m in models})
        object.__setattr__(self, "overrides", {canonical_kind(k): dict(v) for k, v in self.overrides.items()})
        if self.repeats < 1:
            raise ParameterError("repeats must be >= 1")
        if self.k_folds < 2:
            raise ParameterError("k_folds must be >= 2")
        if self.mode not in BRIER_MODES:
            raise ParameterError(f"mode must be one of {BRIER_MODES}")
        if not self.probability_scale > 0:
            raise ParameterError("probability_scale must be positive")
        if self.calibration_source not in CALIBRATION_SOURCES:
            raise ParameterError(f"calibration_source must be one of {CALIBRATION_SOURCES}")

    def configurations(self) -> list[tuple[str, bool]]:
        out = []
        for m in self.models:
            choice = self.calibration[m]
            if choice in ("off", "both"):
                out.append((m, False))
            if choice in ("on", "both"):
                out.append((m, True))
        return out

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentPlan":
        """Read a plan from a key-value file.

        Windows come either from ``[windows]`` with ``start``, ``count``,
        ``step_months`` and ``horizon_months`` or from a JSON list of
        ``[t0, t1]`` pairs under the top-level key ``windows``. Model
        hyperparameters go under ``[overrides.<model>]`` sections.
        """
        flat = read_config(path)
        tree = nested({k: v for k, v in flat.items() if not k.startswith("overrides.")})
        hyper: dict[str, dict] = {}
        for key, value in flat.items():
            if key.startswith("overrides."):
                _, model, name = key.split(".", 2)
                hyper.setdefault(model, {})[name] = value
        tree.update({k: v for k, v in overrides.items() if v is not None})
        windows = tree.pop("windows", None)
        if isinstance(windows, dict):
            windows = rolling_windows(
                windows.get("start", "2021-05-01"),
                int(windows.get("count", 6)),
                int(windows.get("step_months", 6)),
                int(windows.get("horizon_months", 12)),
            )
        elif isinstance(windows, list):
            windows = [PredictionWindow(a, b) for a, b in windows]
        elif windows is None:
            windows = rolling_windows("2021-05-01")
        else:
            raise ParameterError(f"{path}: cannot read windows from {windows!r}")
        models = tree.pop("models", ["km", "cox", "gb_cox", "rsf", "weibull_aft"])
        if isinstance(models, str):
            models = [m for m in models.replace(",", " ").split() if m]
        try:
            return cls(windows=tuple(windows), models=tuple(models), overrides=hyper, **tree)
        except TypeError as exc:
            raise ParameterError(f"{path}: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "windows": [[w.t0.isoformat(), w.t1.isoformat()] for w in self.windows],
            "models": list(self.models),
            "calibration": dict(self.calibration),
            "repeats": self.repeats,
            "overrides": {k: dict(v) for k, v in self.overrides.items()},
            "seed": self.seed,
            "k_folds": self.k_folds,
            "mode": self.mode,
            "probability_scale": self.probability_scale,
            "calibration_source": self.calibration_source,
            "evaluate": self.evaluate,
        }


@dataclass
class Cell:
    window: PredictionWindow
    model: str
    calibrated: bool
    expected: float | None = None
    expected_sd: float | None = None
    variance: float | None = None
    actual: int | None = None
    mape: float | None = None
    n_at_risk: int = 0
    repeats: int = 0
    train_cutoff: str | None = None  # latest resolution date seen in any training set of the cell
    skipped: bool = False
    note: str = ""

    def row(self) -> dict:
        def num(v):
            return "" if v is None else repr(float(v))

        return {
            "t0": self.window.t0.isoformat(),
            "t1": self.window.t1.isoformat(),
            "model": DISPLAY_NAMES[self.model],
            "calibrated": int(self.calibrated),
            "expected": num(self.expected),
            "expected_sd": num(self.expected_sd),
            "variance": num(self.variance),
            "actual": "" if self.actual is None else self.actual,
            "mape": num(self.mape),
            "n_at_risk": self.n_at_risk,
            "repeats": self.repeats,
            "train_cutoff": self.train_cutoff or "",
            "skipped": int(self.skipped),
            "note": self.note,
        }


@dataclass
class MetricRow:
    model: str
    ci: float | None
    ibs: float | None
    folds: int
    note: str = ""


@dataclass
class ExperimentReport:
    plan: ExperimentPlan
    cells: list[Cell]
    metrics: list[MetricRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def scored_cells(self) -> list[Cell]:
        return [c for c in self.cells if not c.skipped]

    def mape_by_model(self) -> dict[str, dict[str, float | None]]:
        """Mean MAPE across windows for each (model, calibrated) configuration."""
        out: dict[str, dict[str, float | None]] = {}
        for model, calibrated in self.plan.configurations():
            vals = [c.mape for c in self.scored_cells if c.model == model and c.calibrated == calibrated and c.mape is not None]
            key = "calibrated" if calibrated else "uncalibrated"
            out.setdefault(model, {})[key] = float(np.mean(vals)) if vals else None
        return out

    def cells_csv(self) -> str:
        buf = io.StringIO()
        fields = list(Cell(self.plan.windows[0], self.plan.models[0], False).row())
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for c in self.cells:
            w.writerow(c.row())
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "cells": [c.row() for c in self.cells],
            "mape_by_model": self.mape_by_model(),
            "metrics": [dataclasses.asdict(m) for m in self.metrics],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def metrics_table(self) -> str:
        return format_table([(m.model, m.ci, m.ibs) for m in self.metrics])

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"cells": out / "cells.csv", "report": out / "report.json", "chart": out / "mape.svg"}
        paths["cells"].write_text(self.cells_csv(), encoding="utf-8")
        paths["report"].write_text(self.to_json(), encoding="utf-8")
        write_mape_chart(self, paths["chart"])
        return paths


def write_mape_chart(report: ExperimentReport, path) -> None:
    """Grouped bars of mean MAPE per model, uncalibrated next to calibrated."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    summary = report.mape_by_model()
    models = list(summary)
    x = np.arange(len(models))
    with matplotlib.rc_context({"svg.hashsalt": "fleetlife", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 4))
        for offset, key, color in ((-0.2, "uncalibrated", "#7f7f7f"), (0.2, "calibrated", "#1f77b4")):
            vals = [summary[m].get(key) for m in models]
            heights = [v if v is not None else 0.0 for v in vals]
            bars = ax.bar(x + offset, heights, width=0.4, label=key, color=color)
            for bar, v in zip(bars, vals):
                if v is not None:
                    ax.annotate(f"{v:.1f}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                                ha="center", va="bottom", fontsize=8)
        ax.axhline(10.0, color="#d62728", linestyle="--", linewidth=1, label="10% limit")
        ax.set_xticks(x, [DISPLAY_NAMES[m] for m in models])
        ax.set_ylabel("mean MAPE across windows (%)")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)


# ---------------------------------------------------------------------------
# Cell evaluation


def assert_no_leak(train: Dataset, t0) -> str | None:
    """Check that nothing in ``train`` is resolved after ``t0``; returns the latest resolution date."""
    if len(train) == 0:
        return None
    t0 = np.datetime64(t0, "D")
    latest = train.last_log_date.max()
    if latest > t0 or np.any(train.install_date >= t0):
        raise LeakError(f"training data reaches {latest}, beyond cutoff {t0}")
    return str(latest)


def usable_columns(train: Dataset, kind: str) -> list[str]:
    """Design columns that vary within ``train`` (constant ones cannot be estimated)."""
    if kind == "km":
        return []
    base = train.design_columns() if kind in ("cox", "weibull_aft") else list(train.feature_names)
    return [c for c in base if np.ptp(train.column(c)) > 0]


def _fit_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


@dataclass
class _Context:
    data: Dataset
    truth: GroundTruth | None
    plan: ExperimentPlan
    n_jobs: int


def _fit_at(ctx: _Context, kind: str, w: PredictionWindow, seed: int):
    train, truth = restrict_to_window(ctx.data, w)
    cutoff = assert_no_leak(train, w.t0_np)
    model = fit_model(kind, train, ctx.plan.overrides.get(kind), seed=seed,
                      columns=usable_columns(train, kind), n_jobs=ctx.n_jobs)
    return model, train, truth, cutoff


def _actual_count(ctx: _Context, w: PredictionWindow, truth: Dataset) -> int:
    if ctx.truth is not None:
        return true_window_failures(ctx.truth, w, ctx.data.ids)
    return int(np.sum(truth.event))


def _calibration_window(plan: ExperimentPlan, index: int) -> PredictionWindow | None:
    if plan.calibration_source == "previous":
        return plan.windows[index - 1] if index > 0 else None
    w = plan.windows[index]
    months = (w.t1.year - w.t0.year) * 12 + (w.t1.month - w.t0.month)
    return PredictionWindow(add_months(w.t0, -months), w.t0)


def _window_cells(ctx: _Context, index: int) -> list[Cell]:
    plan = ctx.plan
    w = plan.windows[index]
    cells: list[Cell] = []
    for mi, kind in enumerate(plan.models):
        configs = [cal for m, cal in plan.configurations() if m == kind]
        repeats = plan.repeats if kind in RANDOMIZED else 1
        raw: list[FailureForecast] = []
        cal: list[FailureForecast] = []
        cal_note = ""
        cutoffs: list[str] = []
        actual = None
        n_at_risk = 0
        fit_error = ""
        for r in range(repeats):
            seed = _fit_seed(plan.seed, index, mi, r)
            try:
                model, train, truth, cutoff = _fit_at(ctx, kind, w, seed)
            except FleetlifeError as exc:
                fit_error = f"{type(exc).__name__}: {exc}"
                break
            cutoffs.append(cutoff or "")
            actual = _actual_count(ctx, w, truth)
            fc = forecast_window(model, train, w, probability_scale=plan.probability_scale)
            n_at_risk = fc.n_subjects
            raw.append(fc)
            if True not in configs:
                continue
            past = _calibration_window(plan, index)
            if past is None:
                cal_note = "no earlier window to calibrate on"
                continue
            try:
                past_model, past_train, past_truth, past_cutoff = _fit_at(ctx, kind, past, seed)
                past_fc = forecast_window(past_model, past_train, past, probability_scale=plan.probability_scale)
                pairs = build_calibration_pairs(past_fc.per_subject, past_truth, past)
                if plan.calibration_source == "lagged" and past.t1 > w.t0:
                    raise LeakError("calibration window ends after the forecast cutoff")
                cal.append(calibrate_forecast(fc, fit_isotonic(pairs)))
                cutoffs.append(past_cutoff or "")
            except (EmptyRiskSetError, InsufficientDataError) as exc:
                cal_note = f"calibration unavailable: {exc}"
            except FleetlifeError as exc:
                if isinstance(exc, LeakError):
                    raise
                cal_note = f"calibration fit failed: {type(exc).__name__}: {exc}"
        for calibrated in configs:
            forecasts = cal if calibrated else raw
            cell = Cell(w, kind, calibrated, actual=actual, n_at_risk=n_at_risk, repeats=len(forecasts),
                        train_cutoff=max(cutoffs) if cutoffs else None)
            if fit_error or not forecasts:
                cell.skipped = True
                cell.note = fit_error or cal_note or "no forecast"
            else:
                means = [f.expected_failures for f in forecasts]
                cell.expected = float(math.fsum(means) / len(means))
                cell.expected_sd = float(np.std(means))
                cell.variance = float(math.fsum(f.variance for f in forecasts) / len(forecasts))
                if actual:
                    cell.mape = 100.0 * abs(cell.expected - actual) / actual
                else:
                    cell.note = "actual count is zero; MAPE undefined"
            cells.append(cell)
    return cells


# ---------------------------------------------------------------------------
# k-fold CI / IBS


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    if k < 2 or k > n:
        raise ParameterError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def evaluation_grid(test: Dataset, points: int = 100) -> np.ndarray | None:
    """Grid from 0 to the last event time of ``test``."""
    ev = test.time[test.event == 1]
    if ev.size == 0 or ev.max() <= 0:
        return None
    return np.linspace(0.0, float(ev.max()), points)


def kfold_scores(kind: str, data: Dataset, k: int, seed: int, mode: str = "ipcw", hyper=None,
                 n_jobs: int = 1) -> tuple[float | None, float | None, list[str]]:
    """Mean held-out CI and IBS over ``k`` folds; failed folds are reported, not fatal."""
    kind = canonical_kind(kind)
    cis, ibss, problems = [], [], []
    for f, test_idx in enumerate(kfold_indices(len(data), k, seed)):
        mask = np.ones(len(data), dtype=bool)
        mask[test_idx] = False
        train, test = data.subset(mask), data.subset(test_idx)
        grid = evaluation_grid(test)
        if grid is None:
            problems.append(f"fold {f}: no events in held-out fold")
            continue
        try:
            model = fit_model(kind, train, hyper, seed=_fit_seed(seed, f), columns=usable_columns(train, kind),
                              n_jobs=n_jobs)
            scores, _ = brier_curve(model.survival_matrix(test, grid), test, grid, mode)
        except FleetlifeError as exc:
            problems.append(f"fold {f}: {type(exc).__name__}: {exc}")
            continue
        ibs = integrate_brier(grid, scores)
        if not math.isfinite(ibs):
            problems.append(f"fold {f}: IBS undefined")
            continue
        ibss.append(ibs)
        if kind != "km":
            ci, _ = concordance_index(model.risk_score(test), test)
            if ci is not None:
                cis.append(ci)
    ci = float(np.mean(cis)) if cis else None
    ibs = float(np.mean(ibss)) if ibss else None
    return ci, ibs, problems


def random_estimator_scores(data: Dataset, mode: str = "naive") -> tuple[float, float]:
    """CI of constant risk scores and IBS of the constant prediction S = 0.5."""
    grid = evaluation_grid(data)
    if grid is None:
        raise InsufficientDataError("random-estimator row needs at least one event")
    ci, _ = concordance_index(np.zeros(len(data)), data)
    scores, _ = brier_curve(np.full((len(data), grid.size), 0.5), data, grid, mode)
    return (0.5 if ci is None else ci), integrate_brier(grid, scores)


@dataclass
class GridSearchResult:
    best: dict
    scores: list[float | None]
    diagnostics: list[list[str]]


def grid_search_ibs(kind: str, grid: Sequence[Mapping[str, Any]], train: Dataset, k: int = 5, seed: int = 0,
                    mode: str = "ipcw", n_jobs: int = 1) -> GridSearchResult:
    """k-fold IBS for each hyperparameter point; the lowest wins, earlier points win ties."""
    grid = [dict(p) for p in grid]
    if not grid:
        raise ParameterError("hyperparameter grid is empty")
    scores, diags = [], []
    for point in grid:
        try:
            _, ibs, problems = kfold_scores(kind, train, k, seed, mode, hyper=point, n_jobs=n_jobs)
        except ParameterError as exc:
            ibs, problems = None, [str(exc)]
        scores.append(ibs)
        diags.append(problems)
    valid = [(s, i) for i, s in enumerate(scores) if s is not None]
    if not valid:
        raise SearchError("every fold failed for every grid point", diagnostics={json.dumps(p, sort_keys=True): d for p, d in zip(grid, diags)})
    best = min(valid)[1]
    return GridSearchResult(best=grid[best], scores=scores, diagnostics=diags)


# ---------------------------------------------------------------------------


def prepare_data(source: Dataset | FleetConfig, cleaning: CleaningConfig | None = None,
                 ground_truth: GroundTruth | None = None) -> tuple[Dataset, GroundTruth | None]:
    """Generate (for a :class:`FleetConfig`) and clean the fleet used by a plan."""
    if isinstance(source, FleetConfig):
        ds, ground_truth = generate_fleet(source)
        ds, _ = clean(ds, cleaning or CleaningConfig(doa_max_time=source.doa_max_time))
        return ds, ground_truth
    if cleaning is not None:
        source, _ = clean(source, cleaning)
    return source, ground_truth


def run_plan(plan: ExperimentPlan, data: Dataset | FleetConfig, ground_truth: GroundTruth | None = None,
             cleaning: CleaningConfig | None = None, n_jobs: int = 1) -> ExperimentReport:
    """Run every cell of ``plan``.

    With a :class:`FleetConfig` the fleet is generated and cleaned first and
    actual counts come from its ground truth; with a :class:`Dataset` they are
    the failures observed in each window unless ``ground_truth`` is given.
    Windows run concurrently on ``n_jobs`` threads; the report order is fixed.
    """
    ds, gt = prepare_data(data, cleaning, ground_truth)
    ctx = _Context(ds, gt, plan, n_jobs=1 if n_jobs > 1 else n_jobs)
    indices = range(len(plan.windows))
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            per_window = list(pool.map(lambda i: _window_cells(ctx, i), indices))
    else:
        per_window = [_window_cells(ctx, i) for i in indices]
    cells = [c for group in per_window for c in group]
    notes = [f"{c.window} {DISPLAY_NAMES[c.model]}{' +IR' if c.calibrated else ''}: {c.note}" for c in cells if c.note]
    report = ExperimentReport(plan, cells, notes=notes)

    if plan.evaluate:
        latest = plan.windows[-1]
        train, _ = restrict_to_window(ds, latest)
        assert_no_leak(train, latest.t0_np)
        for kind in plan.models:
            ci, ibs, problems = kfold_scores(kind, train, plan.k_folds, plan.seed, plan.mode,
                                             plan.overrides.get(kind), n_jobs=n_jobs)
            report.metrics.append(MetricRow(DISPLAY_NAMES[kind], ci, ibs, plan.k_folds - len(problems), "; ".join(problems)))
        rci, ribs = random_estimator_scores(train, plan.mode)
        report.metrics.append(MetricRow("Random Estimator", rci, ribs, 0))
    return report
