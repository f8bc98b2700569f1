"""Weighted isotonic regression for calibrating window failure probabilities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset, PredictionWindow, resolved_mask
from .exceptions import DomainError, InsufficientDataError


@dataclass(frozen=True)
class CalibrationPair:
    p: float
    y: int
    w: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"probability {self.p} outside [0, 1]")
        if self.y not in (0, 1):
            raise DomainError(f"label {self.y} not in {{0, 1}}")
        if not self.w > 0:
            raise DomainError(f"weight {self.w} must be positive")


def pava(y, w=None) -> np.ndarray:
    """Pool-adjacent-violators: weighted least-squares non-decreasing fit of ``y`` in the given order."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    # each block: [weighted sum, total weight, length]
    sums: list[float] = []
    weights: list[float] = []
    sizes: list[int] = []
    for yi, wi in zip(y, w):
        sums.append(yi * wi)
        weights.append(wi)
        sizes.append(1)
        while len(sums) > 1 and sums[-2] / weights[-2] > sums[-1] / weights[-1]:
            s, wt, sz = sums.pop(), weights.pop(), sizes.pop()
            sums[-1] += s
            weights[-1] += wt
            sizes[-1] += sz
    return np.repeat(np.array(sums) / np.array(weights), sizes) if sums else np.empty(0)


def calibration_order(p, y) -> np.ndarray:
    """Sort by p ascending, ties by label descending, then input order."""
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.lexsort((np.arange(p.size), -y, p))


@dataclass(frozen=True, eq=False)
class IsotonicMap:
    """Step function p -> r, constant from each breakpoint to the next, clamped outside the range."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        v = np.clip(np.asarray(self.values, dtype=float), 0.0, 1.0)
        if b.size == 0 or b.shape != v.shape:
            raise ValueError("breakpoints and values must be non-empty and equally long")
        if np.any(np.diff(b) <= 0) or np.any(np.diff(v) < 0):
            raise ValueError("breakpoints must increase and values must not decrease")
        b.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)

    def __call__(self, p):
        return apply_isotonic(self, p)

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "IsotonicMap":
        return cls(np.asarray(d["breakpoints"], dtype=float), np.asarray(d["values"], dtype=float))


def fit_isotonic_arrays(p, y, w=None) -> IsotonicMap:
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(p) if w is None else np.asarray(w, dtype=float)
    if p.size < 2:
        raise InsufficientDataError("isotonic calibration needs at least two pairs")
    order = calibration_order(p, y)
    fitted = pava(y[order], w[order])
    ps = p[order]
    breakpoints, last = np.unique(ps[::-1], return_index=True)
    # fitted is non-decreasing, so the last entry of each tie group is its largest value
    values = fitted[::-1][last]
    return IsotonicMap(breakpoints, values)


def fit_isotonic(pairs: Sequence[CalibrationPair]) -> IsotonicMap:
    return fit_isotonic_arrays([q.p for q in pairs], [q.y for q in pairs], [q.w for q in pairs])


def apply_isotonic(m: IsotonicMap, p):
    p_arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p_arr)) or np.any((p_arr < 0) | (p_arr > 1)):
        raise DomainError("calibration input must lie in [0, 1]")
    k = np.searchsorted(m.breakpoints, p_arr, side="right") - 1
    out = m.values[np.maximum(k, 0)]
    return float(out) if out.ndim == 0 else out


def build_calibration_pairs(
    probabilities: Mapping[str, float], truth: Dataset, w: PredictionWindow, weights: Mapping[str, float] | None = None
) -> list[CalibrationPair]:
    """Pairs (predicted window failure probability, observed failure) for a resolved past window.

    Subjects censored inside the window, or without a prediction, are left out.
    """
    resolved = resolved_mask(truth, w)
    pairs = []
    for sid, ok, failed in zip(truth.ids, resolved, truth.event):
        if ok and sid in probabilities:
            pairs.append(CalibrationPair(float(probabilities[sid]), int(failed), 1.0 if weights is None else float(weights[sid])))
    if not pairs:
        raise InsufficientDataError(f"no resolvable subjects in window {w}")
    return pairs
