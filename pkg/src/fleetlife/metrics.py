"""Concordance, time-dependent and integrated Brier scores, and MAPE."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .curves import SurvivalCurve, product_limit
from .dataset import Dataset
from .exceptions import ParameterError, UndefinedMetricError

logger = logging.getLogger(__name__)

BRIER_MODES = ("ipcw", "naive")


def _time_event(records):
    if isinstance(records, Dataset):
        return np.asarray(records.time, dtype=float), np.asarray(records.event, dtype=int)
    time, event = records
    return np.asarray(time, dtype=float), np.asarray(event, dtype=int)


def concordance_index(risk, records, block: int = 512) -> tuple[float | None, int]:
    """Harrell's C: fraction of comparable pairs ranked correctly by ``risk``.

    A pair is comparable when the shorter observed time ends in an event
    (ties in observed time are not comparable). Higher risk should go with
    the shorter time; tied risks count one half. Returns ``(None, 0)`` when
    no pair is comparable.
    """
    time, event = _time_event(records)
    risk = np.asarray(risk, dtype=float)
    if risk.shape != time.shape:
        raise ParameterError(f"{risk.size} risk scores for {time.size} records")
    events = np.flatnonzero(event == 1)
    concordant = 0
    ties = 0
    pairs = 0
    for start in range(0, events.size, block):
        a = events[start : start + block]
        comparable = time[None, :] > time[a, None]
        diff = risk[a, None] - risk[None, :]
        pairs += int(comparable.sum())
        concordant += int((comparable & (diff > 0)).sum())
        ties += int((comparable & (diff == 0)).sum())
    if pairs == 0:
        return None, 0
    return (concordant + 0.5 * ties) / pairs, pairs


def _censoring_curve(time, event) -> SurvivalCurve:
    return product_limit(time, 1 - event)


def brier_curve(surv, records, grid, mode: str = "ipcw") -> tuple[np.ndarray, np.ndarray]:
    """BS(t) at every grid time from predictions ``surv[i, k] = S_i(grid[k])``.

    Returns ``(scores, dropped)`` where ``dropped[k]`` counts subjects left
    out at ``grid[k]`` because their censoring weight was undefined.
    """
    if mode not in BRIER_MODES:
        raise ParameterError(f"mode must be one of {BRIER_MODES}, got {mode!r}")
    time, event = _time_event(records)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    surv = np.asarray(surv, dtype=float).reshape(time.size, grid.size)
    failed = (time[:, None] <= grid[None, :]) & (event[:, None] == 1)
    if mode == "naive":
        status = (~failed).astype(float)
        return np.mean((surv - status) ** 2, axis=0), np.zeros(grid.size, dtype=int)
    g = _censoring_curve(time, event)
    g_at_event = np.atleast_1d(g.left_limit(time))
    g_at_grid = np.atleast_1d(g(grid))
    alive = time[:, None] > grid[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        w_fail = np.where(failed, 1.0 / g_at_event[:, None], 0.0)
        w_alive = np.where(alive, 1.0 / g_at_grid[None, :], 0.0)
    undefined = (failed & (g_at_event[:, None] <= 0)) | (alive & (g_at_grid[None, :] <= 0))
    w_fail[undefined] = 0.0
    w_alive[undefined] = 0.0
    terms = w_fail * surv**2 + w_alive * (1.0 - surv) ** 2
    dropped = undefined.sum(axis=0)
    n_used = time.size - dropped
    if dropped.any():
        logger.info("Brier score: dropped up to %d subject(s) with zero censoring weight", int(dropped.max()))
    with np.errstate(invalid="ignore"):
        return np.where(n_used > 0, terms.sum(axis=0) / np.maximum(n_used, 1), np.nan), dropped


def _curve_matrix(curves: Sequence[SurvivalCurve], grid) -> np.ndarray:
    return np.vstack([np.atleast_1d(c(grid)) for c in curves])


def brier_score(curves: Sequence[SurvivalCurve], records, t: float, mode: str = "ipcw") -> float:
    scores, _ = brier_curve(_curve_matrix(curves, [t]), records, [t], mode)
    return float(scores[0])


def default_grid(records, points: int = 100) -> np.ndarray:
    time, event = _time_event(records)
    ev = time[event == 1]
    if ev.size < 1 or ev.min() == ev.max():
        raise ParameterError("default grid needs at least two distinct event times")
    return np.linspace(ev.min(), ev.max(), points)


def _check_grid(grid, t_max):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0) or grid[0] < 0:
        raise ParameterError("grid needs >= 2 strictly increasing non-negative times")
    t_max = float(grid[-1] if t_max is None else t_max)
    if t_max <= 0 or grid[-1] > t_max:
        raise ParameterError("grid must lie within [0, t_max]")
    return grid, t_max


def integrate_brier(grid, scores, t_max=None) -> float:
    """Trapezoidal integral of BS over ``grid`` divided by ``t_max``."""
    grid, t_max = _check_grid(grid, t_max)
    scores = np.asarray(scores, dtype=float)
    return float(np.sum(np.diff(grid) * (scores[1:] + scores[:-1]) / 2.0) / t_max)


def integrated_brier_score(curves, records, grid=None, mode: str = "ipcw", t_max=None) -> float:
    """IBS of per-subject curves; ``curves`` may also be an (n, len(grid)) survival matrix."""
    grid = default_grid(records) if grid is None else grid
    grid, t_max = _check_grid(grid, t_max)
    surv = curves if isinstance(curves, np.ndarray) else _curve_matrix(curves, grid)
    scores, _ = brier_curve(surv, records, grid, mode)
    return integrate_brier(grid, scores, t_max)


def mape(predicted, actual) -> float:
    """Mean absolute percentage error, relative to the actual counts."""
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape or predicted.ndim != 1 or predicted.size == 0:
        raise ParameterError("predicted and actual must be equally long, non-empty vectors")
    if np.any(actual == 0):
        raise UndefinedMetricError("MAPE is undefined when an actual count is zero")
    return float(100.0 / actual.size * np.sum(np.abs(actual - predicted) / np.abs(actual)))


@dataclass
class MetricReport:
    model: str
    ci: float | None
    n_comparable_pairs: int
    ibs: float
    brier_curve: list[tuple[float, float]] = field(default_factory=list)
    mape: float | None = None
    mode: str = "ipcw"
    t_max: float | None = None

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "ci": self.ci,
            "n_comparable_pairs": self.n_comparable_pairs,
            "ibs": self.ibs,
            "brier_curve": [[float(t), float(b)] for t, b in self.brier_curve],
            "mape": self.mape,
            "mode": self.mode,
            "t_max": self.t_max,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def evaluate_model(model, records: Dataset, grid=None, mode: str = "ipcw", name: str | None = None,
                   ci_applicable: bool = True) -> MetricReport:
    """CI and IBS of a fitted model on ``records``."""
    grid = default_grid(records) if grid is None else np.asarray(grid, dtype=float)
    grid, t_max = _check_grid(grid, None)
    if ci_applicable:
        ci, pairs = concordance_index(model.risk_score(records), records)
    else:
        ci, pairs = None, 0
    scores, _ = brier_curve(model.survival_matrix(records, grid), records, grid, mode)
    return MetricReport(
        model=name or model.kind, ci=ci, n_comparable_pairs=pairs, ibs=integrate_brier(grid, scores, t_max),
        brier_curve=list(zip(grid.tolist(), scores.tolist())), mode=mode, t_max=t_max,
    )


def format_table(rows: Sequence[tuple[str, float | None, float | None]]) -> str:
    """Plain-text table with Model | CI | IBS columns."""
    def cell(v, digits=3):
        return "N/A" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{digits}f}"

    width = max([len("Model")] + [len(r[0]) for r in rows])
    line = f"+{'-' * (width + 2)}+-------+-------+"
    out = [line, f"| {'Model':<{width}} |  CI   |  IBS  |", line]
    out += [f"| {name:<{width}} | {cell(ci):>5} | {cell(ibs):>5} |" for name, ci, ibs in rows]
    out.append(line)
    return "\n".join(out)
