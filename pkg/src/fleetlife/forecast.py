"""Window failure probabilities and expected failure counts.

Each unit at risk is a Bernoulli trial whose failure probability is
1 - S(j) / S(i), with i its operational time at the window start and j the
operational time it is projected to reach at the window end.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .calibration import IsotonicMap, apply_isotonic
from .curves import SurvivalCurve
from .dataset import Dataset, PredictionWindow, at_risk_mask, days_between
from .exceptions import ConditioningError, DomainError

__all__ = [
    "FailureForecast",
    "calibrate_forecast",
    "PredictionWindow",
    "conditional_survival",
    "expected_failures",
    "forecast_window",
    "project_exposure",
    "window_failure_probability",
]


def conditional_survival(curve: SurvivalCurve, i: float, j: float) -> float:
    """Pr(survive to j | survived to i) = S(j) / S(i)."""
    if i < 0 or j < 0:
        raise DomainError("times must be non-negative")
    if i > j:
        raise DomainError(f"need i <= j, got i={i}, j={j}")
    if i == j:
        return 1.0
    s_i = curve(i)
    if s_i <= 0:
        raise ConditioningError(f"S({i}) = 0: cannot condition on survival to {i}")
    return min(max(curve(j) / s_i, 0.0), 1.0)


def window_failure_probability(curve: SurvivalCurve, i: float, j: float, calibration: IsotonicMap | None = None) -> float:
    p = 1.0 - conditional_survival(curve, i, j)
    return apply_isotonic(calibration, p) if calibration is not None else p


def expected_failures(probs) -> tuple[float, float]:
    """Mean and variance of the number of failures among independent Bernoulli trials."""
    probs = [float(p) for p in probs]
    if any(not (0.0 <= p <= 1.0) for p in probs):
        raise DomainError("probabilities must lie in [0, 1]")
    return math.fsum(probs), math.fsum(p * (1.0 - p) for p in probs)


@dataclass(frozen=True)
class FailureForecast:
    window: PredictionWindow
    per_subject: dict[str, float]
    expected_failures: float
    variance: float
    calibrated: bool
    entry_time: dict[str, float] = field(default_factory=dict)
    horizon_time: dict[str, float] = field(default_factory=dict)
    excluded: tuple[str, ...] = ()

    @property
    def n_subjects(self) -> int:
        return len(self.per_subject)

    def summary(self) -> dict:
        return {
            "window": {"t0": self.window.t0.isoformat(), "t1": self.window.t1.isoformat()},
            "expected_failures": self.expected_failures,
            "variance": self.variance,
            "calibrated": self.calibrated,
            "n_subjects": self.n_subjects,
            "diagnostics": {"excluded_zero_survival": len(self.excluded), "excluded_ids": list(self.excluded)},
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "entry_time", "horizon_time", "failure_probability"])
            for sid, p in self.per_subject.items():
                w.writerow([sid, repr(self.entry_time[sid]), repr(self.horizon_time[sid]), repr(p)])

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def project_exposure(at_risk: Dataset, w: PredictionWindow) -> tuple[np.ndarray, np.ndarray]:
    """Operational time at ``t0`` and projected operational time at ``t1``.

    The projection extends each unit's average usage rate since installation.
    """
    i = np.asarray(at_risk.time, dtype=float)
    days_t0 = np.maximum(days_between(at_risk.install_date, w.t0_np), 1)
    rate = i / days_t0
    return i, i + rate * w.span_days


def forecast_window(
    model,
    at_risk: Dataset,
    w: PredictionWindow,
    calibration: IsotonicMap | None = None,
    probability_scale: float = 1.0,
) -> FailureForecast:
    """Expected failures in ``w`` among the units of ``at_risk`` still observed at ``t0``.

    ``at_risk`` is normally the window's train split; other units are
    ignored. ``probability_scale`` multiplies raw probabilities before
    calibration and exists for bias stress tests.
    """
    sub = at_risk.subset(at_risk_mask(at_risk, w))
    i, j = project_exposure(sub, w)
    s_i = np.asarray(model.survival_at(sub, i), dtype=float)
    s_j = np.asarray(model.survival_at(sub, j), dtype=float)
    ok = s_i > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(ok, 1.0 - np.clip(s_j / np.where(ok, s_i, 1.0), 0.0, 1.0), np.nan)
    p = np.where(i == j, 0.0, p)
    p = np.clip(p * probability_scale, 0.0, 1.0)
    if calibration is not None:
        p[ok] = apply_isotonic(calibration, p[ok])
    ids = [str(s) for s in sub.ids]
    order = np.argsort(np.array(ids, dtype=object), kind="stable")
    per_subject = {ids[k]: float(p[k]) for k in order if ok[k]}
    mean, var = expected_failures(per_subject.values())
    return FailureForecast(
        window=w,
        per_subject=per_subject,
        expected_failures=mean,
        variance=var,
        calibrated=calibration is not None,
        entry_time={ids[k]: float(i[k]) for k in order if ok[k]},
        horizon_time={ids[k]: float(j[k]) for k in order if ok[k]},
        excluded=tuple(ids[k] for k in order if not ok[k]),
    )


def calibrate_forecast(fc: FailureForecast, calibration: IsotonicMap) -> FailureForecast:
    """Apply ``calibration`` to the per-subject probabilities of an uncalibrated forecast."""
    if fc.calibrated:
        raise DomainError("forecast is already calibrated")
    ids = list(fc.per_subject)
    raw = np.array([fc.per_subject[k] for k in ids], dtype=float)
    cal = np.atleast_1d(apply_isotonic(calibration, raw)) if ids else raw
    per_subject = {k: float(p) for k, p in zip(ids, cal)}
    mean, var = expected_failures(per_subject.values())
    return replace(fc, per_subject=per_subject, expected_failures=mean, variance=var, calibrated=True)
