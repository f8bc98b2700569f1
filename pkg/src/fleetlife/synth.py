"""Synthetic fleets with known ground truth.

Lifetimes (operational hours) follow a Weibull AFT model conditioned on
outliving the dead-on-arrival threshold; units are installed at staggered
dates and administratively censored at one snapshot date. The installation
span is tuned by bisection so the censoring rate hits its target.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .config import nested, read_config
from .dataset import CsvSchema, Dataset, PredictionWindow, from_frame
from .exceptions import ParameterError

DAYS_PER_YEAR = 365.25


def _default_beta() -> dict[str, float]:
    return {
        "intercept": 13.0,
        "ink_volume_per_hour": -2.0,
        "daily_hours": -0.05,
        "color_C": -0.15,
        "color_M": -0.1,
        "color_Y": 0.1,
        "position_rear": -0.2,
        "storage_flag": -0.3,
    }


@dataclass(frozen=True)
class FleetConfig:
    n_subjects: int = 10000
    true_beta: Mapping[str, float] = field(default_factory=_default_beta)
    true_sigma: float = 0.5
    target_censoring_rate: float = 0.7
    continuous: Mapping[str, Sequence[float]] = field(
        default_factory=lambda: {"ink_volume_per_hour": (0.5, 2.0), "daily_hours": (2.0, 10.0)}
    )
    categorical: Mapping[str, Sequence[str]] = field(
        default_factory=lambda: {"color": ("K", "C", "M", "Y"), "position": ("front", "rear")}
    )
    doa_fraction: float = 0.01
    storage_delay_fraction: float = 0.05
    overuse_fraction: float = 0.01
    noise_scale: float = 0.1
    doa_max_time: float = 100.0
    snapshot_date: dt.date = dt.date(2024, 12, 1)
    max_install_years: float = 40.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.snapshot_date, str):
            object.__setattr__(self, "snapshot_date", dt.date.fromisoformat(self.snapshot_date))
        if self.n_subjects < 10:
            raise ParameterError("n_subjects must be >= 10")
        if not self.true_sigma > 0:
            raise ParameterError("true_sigma must be positive")
        if not 0 < self.target_censoring_rate < 1:
            raise ParameterError("target_censoring_rate must lie in (0, 1)")
        for name in ("doa_fraction", "storage_delay_fraction", "overuse_fraction"):
            if not 0 <= getattr(self, name) < 1:
                raise ParameterError(f"{name} must lie in [0, 1)")
        if self.noise_scale < 0 or self.doa_max_time <= 0:
            raise ParameterError("noise_scale must be >= 0 and doa_max_time > 0")
        for name in ("ink_volume_per_hour", "daily_hours"):
            if name not in self.continuous:
                raise ParameterError(f"continuous covariate ranges need {name!r}")
        if "intercept" not in self.true_beta:
            raise ParameterError("true_beta needs an 'intercept' entry")

    @classmethod
    def from_file(cls, path, **overrides) -> "FleetConfig":
        values = nested(read_config(path))
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**values)
        except TypeError as exc:
            raise ParameterError(f"{path}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class GroundTruth:
    ids: np.ndarray
    lifetime: np.ndarray  # true operational hours to failure
    install_date: np.ndarray
    failure_date: np.ndarray
    is_doa: np.ndarray
    is_storage_delayed: np.ndarray
    is_overuse: np.ndarray
    true_beta: Mapping[str, float]
    true_sigma: float
    snapshot_date: dt.date
    install_span_days: int
    achieved_censoring_rate: float

    def to_dict(self) -> dict:
        return {
            "ids": [str(i) for i in self.ids],
            "lifetime": [float(v) for v in self.lifetime],
            "install_date": [str(d) for d in self.install_date],
            "failure_date": [str(d) for d in self.failure_date],
            "is_doa": [bool(v) for v in self.is_doa],
            "is_storage_delayed": [bool(v) for v in self.is_storage_delayed],
            "is_overuse": [bool(v) for v in self.is_overuse],
            "true_beta": dict(self.true_beta),
            "true_sigma": self.true_sigma,
            "snapshot_date": self.snapshot_date.isoformat(),
            "install_span_days": self.install_span_days,
            "achieved_censoring_rate": self.achieved_censoring_rate,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d) -> "GroundTruth":
        return cls(
            ids=np.asarray(d["ids"], dtype=object),
            lifetime=np.asarray(d["lifetime"], dtype=float),
            install_date=np.asarray(d["install_date"], dtype="datetime64[D]"),
            failure_date=np.asarray(d["failure_date"], dtype="datetime64[D]"),
            is_doa=np.asarray(d["is_doa"], dtype=bool),
            is_storage_delayed=np.asarray(d["is_storage_delayed"], dtype=bool),
            is_overuse=np.asarray(d["is_overuse"], dtype=bool),
            true_beta=d["true_beta"],
            true_sigma=float(d["true_sigma"]),
            snapshot_date=dt.date.fromisoformat(d["snapshot_date"]),
            install_span_days=int(d["install_span_days"]),
            achieved_censoring_rate=float(d["achieved_censoring_rate"]),
        )

    @classmethod
    def read_json(cls, path) -> "GroundTruth":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class CensoringTargetError(ParameterError):
    def __init__(self, target, achieved):
        self.target, self.achieved = target, achieved
        super().__init__(f"cannot reach censoring rate {target:.3f}; closest achieved {achieved:.3f}")


def weibull_aft_lifetimes(rng, linear_predictor, sigma, lower=0.0):
    """Draw T with log T = lp + sigma * eps (eps min-Gumbel), conditioned on T >= lower."""
    lp = np.asarray(linear_predictor, dtype=float)
    base = (lower / np.exp(lp)) ** (1.0 / sigma) if lower > 0 else 0.0
    return np.exp(lp) * (base + rng.standard_exponential(lp.shape)) ** sigma


def _fmt(v: float) -> str:
    return repr(float(v))


def generate_fleet(cfg: FleetConfig) -> tuple[Dataset, GroundTruth]:
    """Synthetic fleet snapshot plus its ground truth; deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_subjects
    lo, hi = cfg.continuous["ink_volume_per_hour"]
    ink_rate = rng.uniform(lo, hi, n)
    lo, hi = cfg.continuous["daily_hours"]
    daily = rng.uniform(lo, hi, n)
    labels = {col: np.asarray(levels, dtype=object)[rng.integers(0, len(levels), n)] for col, levels in cfg.categorical.items()}
    storage = rng.random(n) < cfg.storage_delay_fraction
    storage_gap = np.where(storage, rng.uniform(1.6, 3.0, n), rng.uniform(0.0, 0.5, n)) * DAYS_PER_YEAR
    install_pos = rng.random(n)
    doa = rng.random(n) < cfg.doa_fraction
    overuse = (rng.random(n) < cfg.overuse_fraction) & ~doa
    inflate = rng.uniform(13.0, 20.0, n) / daily
    ink_noise = np.exp(cfg.noise_scale * rng.standard_normal(n))

    design = {"ink_volume_per_hour": ink_rate, "daily_hours": daily, "storage_flag": storage.astype(float)}
    for col, values in labels.items():
        for level in cfg.categorical[col]:
            design[f"{col}_{level}"] = (values == level).astype(float)
    lp = np.full(n, float(cfg.true_beta["intercept"]))
    for name, coef in cfg.true_beta.items():
        if name == "intercept":
            continue
        if name not in design:
            raise ParameterError(f"true_beta names unknown covariate {name!r}")
        lp += coef * design[name]
    lifetime = weibull_aft_lifetimes(rng, lp, cfg.true_sigma, lower=cfg.doa_max_time)
    doa_life = rng.uniform(0.01, 0.9, n) * cfg.doa_max_time
    lifetime = np.where(doa, doa_life, lifetime)
    life_days = np.floor(lifetime / daily).astype(np.int64)
    snapshot = np.datetime64(cfg.snapshot_date, "D")

    def censoring_for(span_days):
        offset = np.floor(install_pos * span_days).astype(np.int64) + 1
        install = snapshot - offset
        event = install + life_days <= snapshot
        return install, event, float(1.0 - event.mean())

    lo_span, hi_span = 30.0, cfg.max_install_years * DAYS_PER_YEAR
    rate_lo, rate_hi = censoring_for(lo_span)[2], censoring_for(hi_span)[2]
    target = cfg.target_censoring_rate
    if not rate_hi - 0.03 <= target <= rate_lo + 0.03:
        raise CensoringTargetError(target, rate_hi if target < rate_hi else rate_lo)
    for _ in range(60):
        mid = 0.5 * (lo_span + hi_span)
        if censoring_for(mid)[2] > target:
            lo_span = mid
        else:
            hi_span = mid
    span = int(round(0.5 * (lo_span + hi_span)))
    install, event, achieved = censoring_for(span)
    if abs(achieved - target) > 0.03:
        raise CensoringTargetError(target, achieved)

    failure_date = install + life_days
    last_log = np.where(event, failure_date, snapshot)
    true_hours = np.where(event, lifetime, daily * (snapshot - install).astype(np.int64))
    logged_hours = np.where(overuse, true_hours * inflate, true_hours)
    ink_volume = ink_rate * true_hours * ink_noise
    production = install - np.round(storage_gap).astype(np.int64)

    ids = np.array([f"PH{k:06d}" for k in range(n)], dtype=object)
    frame = pd.DataFrame(
        {
            "id": ids,
            "warm_hours": [_fmt(v) for v in logged_hours],
            "event": event.astype(int).astype(str),
            "production_date": production.astype(str),
            "install_date": install.astype(str),
            "last_log_date": last_log.astype(str),
            "ink_volume": [_fmt(v) for v in ink_volume],
            **{col: values for col, values in labels.items()},
        }
    )
    schema = CsvSchema(categorical=tuple(cfg.categorical), per_hour=("ink_volume",))
    ds = from_frame(frame, schema, source="generated fleet")
    gt = GroundTruth(
        ids=ids,
        lifetime=lifetime,
        install_date=install,
        failure_date=failure_date,
        is_doa=doa,
        is_storage_delayed=storage,
        is_overuse=overuse,
        true_beta=dict(cfg.true_beta),
        true_sigma=cfg.true_sigma,
        snapshot_date=cfg.snapshot_date,
        install_span_days=span,
        achieved_censoring_rate=achieved,
    )
    return ds, gt


def true_window_failures(gt: GroundTruth, w: PredictionWindow, ids=None) -> int:
    """Units at risk at ``t0`` whose true failure date falls in ``(t0, t1]``.

    ``ids`` restricts the count to a subset (e.g. the units kept by cleaning).
    """
    at_risk = (gt.install_date < w.t0_np) & (gt.failure_date > w.t0_np)
    if ids is not None:
        keep = {str(i) for i in ids}
        at_risk &= np.fromiter((str(i) in keep for i in gt.ids), dtype=bool, count=gt.ids.size)
    return int(np.sum(at_risk & (gt.failure_date <= w.t1_np)))


def config_dict(cfg: FleetConfig) -> dict:
    d = asdict(cfg)
    d["snapshot_date"] = cfg.snapshot_date.isoformat()
    return d


def _uniform_censoring(rng, lifetime, target):
    """Censor at C ~ U(0, tau) with tau set so the censored share is close to ``target``."""
    u = rng.random(lifetime.size)
    lo, hi = 0.0, float(lifetime.max()) * 1e3
    for _ in range(100):
        tau = 0.5 * (lo + hi)
        if np.mean(lifetime > u * tau) > target:
            lo = tau
        else:
            hi = tau
    c = u * 0.5 * (lo + hi)
    return np.minimum(lifetime, c), (lifetime <= c).astype(np.int8)


def simulate_weibull_ph(n, beta, shape=1.5, scale=1.0, censoring=0.3, seed=0):
    """Weibull proportional-hazards sample with standard-normal covariates.

    Hazard ``scale * shape * t**(shape-1) * exp(x @ beta)``. Returns ``(X, time, event)``.
    """
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    X = rng.standard_normal((n, beta.size))
    lifetime = (rng.standard_exponential(n) / (scale * np.exp(X @ beta))) ** (1.0 / shape)
    time, event = _uniform_censoring(rng, lifetime, censoring)
    return X, time, event


def simulate_weibull_aft(n, beta, sigma, censoring=0.3, seed=0):
    """Weibull AFT sample: ``log T = beta[0] + X @ beta[1:] + sigma * eps``.

    Covariates are standard normal; ``X`` excludes the intercept column.
    """
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    X = rng.standard_normal((n, beta.size - 1))
    lifetime = weibull_aft_lifetimes(rng, beta[0] + X @ beta[1:], sigma)
    time, event = _uniform_censoring(rng, lifetime, censoring)
    return X, time, event
