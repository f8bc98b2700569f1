"""Step-function survival curves and the counting estimators behind them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    """Right-continuous, non-increasing step function S(t).

    ``S(t) = probs[k]`` for ``times[k] <= t < times[k+1]`` and ``S(t) = 1``
    before ``times[0]``. At a jump time the stored value is the post-jump
    value, i.e. Pr(T > t); :meth:`left_limit` gives Pr(T >= t).
    """

    times: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        probs = np.array(self.probs, dtype=float).reshape(-1)
        if times.shape != probs.shape:
            raise ValueError("times and probs must have the same length")
        if times.size:
            if np.any(times < 0) or np.any(np.diff(times) <= 0):
                raise ValueError("times must be non-negative and strictly increasing")
            if np.any((probs < 0) | (probs > 1)):
                raise ValueError("probs must lie in [0, 1]")
            if np.any(np.diff(probs) > 0):
                raise ValueError("probs must be non-increasing")
        times.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def constant(cls) -> "SurvivalCurve":
        """The curve S(t) = 1 everywhere."""
        return cls(np.empty(0), np.empty(0))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("survival curves are defined for t >= 0")
        k = np.searchsorted(self.times, t, side="right")
        padded = np.concatenate(([1.0], self.probs))
        out = padded[k]
        return out.item() if out.ndim == 0 else out

    def left_limit(self, t):
        """S(t-) = Pr(T >= t)."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="left")
        padded = np.concatenate(([1.0], self.probs))
        out = padded[k]
        return out.item() if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SurvivalCurve":
        return cls(np.asarray(d["times"], dtype=float), np.asarray(d["probs"], dtype=float))


def risk_table(time, event):
    """Distinct event times with their event counts and risk-set sizes.

    Returns ``(event_times, d, r)`` where ``r[j]`` counts subjects with
    observed time ``>= event_times[j]``. Censored subjects at a tied time are
    still at risk for events at that time.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(bool)
    event_times = np.unique(time[event])
    if event_times.size == 0:
        return event_times, np.empty(0, dtype=int), np.empty(0, dtype=int)
    sorted_time = np.sort(time)
    r = time.size - np.searchsorted(sorted_time, event_times, side="left")
    d = np.searchsorted(np.sort(time[event]), event_times, side="right") - np.searchsorted(
        np.sort(time[event]), event_times, side="left"
    )
    return event_times, d.astype(int), r.astype(int)


def product_limit(time, event) -> SurvivalCurve:
    """Kaplan-Meier product-limit curve with one factor per distinct event time."""
    event_times, d, r = risk_table(time, event)
    if event_times.size == 0:
        return SurvivalCurve.constant()
    probs = np.cumprod(1.0 - d / r)
    return SurvivalCurve(event_times, probs)


def nelson_aalen(time, event):
    """Nelson-Aalen cumulative hazard ``(event_times, H)`` with H = cumsum(d/r)."""
    event_times, d, r = risk_table(time, event)
    return event_times, np.cumsum(d / r) if event_times.size else np.empty(0)


def step_values(times, values, t, before=0.0):
    """Evaluate a right-continuous step function given by ``(times, values)`` at ``t``."""
    k = np.searchsorted(np.asarray(times), np.asarray(t, dtype=float), side="right")
    padded = np.concatenate(([before], np.asarray(values, dtype=float)))
    return padded[k]
