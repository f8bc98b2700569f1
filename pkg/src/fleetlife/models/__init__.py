"""Survival models sharing the :class:`SurvivalModel` prediction contract."""

from __future__ import annotations

from typing import Any

from ..dataset import Dataset
from ..exceptions import ParameterError
from .base import SurvivalModel, load_model, model_from_dict, save_model
from .boosting import GbCoxModel, cox_negative_gradient, cox_partial_loglik_scores, fit_gb_cox
from .cox import CoxModel, CoxOptions, cox_log_partial_likelihood, fit_cox, predict_cox_survival
from .forest import RsfModel, fit_rsf, predict_rsf_survival
from .kaplan_meier import KaplanMeierModel, fit_kaplan_meier
from .tree import log_rank_statistic
from .weibull import AftOptions, WeibullAftModel, fit_weibull_aft, predict_aft_survival, weibull_aft_loglik

MODEL_KINDS = ("km", "cox", "gb_cox", "rsf", "weibull_aft")
_ALIASES = {
    "kaplan_meier": "km", "coxph": "cox", "gbcox": "gb_cox", "cboost": "gb_cox",
    "aft": "weibull_aft", "weibull": "weibull_aft", "watf": "weibull_aft", "weibullaft": "weibull_aft",
}
DISPLAY_NAMES = {"km": "KM", "cox": "CoxPH", "gb_cox": "GBCox", "rsf": "RSF", "weibull_aft": "WeibullAFT"}
RANDOMIZED = frozenset({"rsf", "gb_cox"})


def canonical_kind(kind: str) -> str:
    key = kind.strip().lower().replace("-", "_")
    key = _ALIASES.get(key, key)
    if key not in MODEL_KINDS:
        raise ParameterError(f"unknown model kind {kind!r}; choose from {', '.join(MODEL_KINDS)}")
    return key


def fit_model(kind: str, train: Dataset, hyper: dict[str, Any] | None = None, seed: int = 0,
              columns=None, n_jobs: int = 1) -> SurvivalModel:
    """Fit any model kind with keyword hyperparameters."""
    kind = canonical_kind(kind)
    hyper = dict(hyper or {})
    try:
        if kind == "km":
            return fit_kaplan_meier(train)
        if kind == "cox":
            return fit_cox(train, CoxOptions(**hyper), columns=columns)
        if kind == "weibull_aft":
            return fit_weibull_aft(train, AftOptions(**hyper), columns=columns)
        if kind == "rsf":
            return fit_rsf(train, seed=seed, columns=columns, n_jobs=n_jobs, **hyper)
        return fit_gb_cox(train, seed=seed, columns=columns, **hyper)
    except TypeError as exc:
        raise ParameterError(f"bad hyperparameters for {kind}: {exc}") from exc


__all__ = [
    "AftOptions", "CoxModel", "CoxOptions", "DISPLAY_NAMES", "GbCoxModel", "KaplanMeierModel", "MODEL_KINDS",
    "RANDOMIZED", "RsfModel", "SurvivalModel", "WeibullAftModel", "canonical_kind", "cox_log_partial_likelihood",
    "cox_negative_gradient", "cox_partial_loglik_scores", "fit_cox", "fit_gb_cox", "fit_kaplan_meier", "fit_model",
    "fit_rsf", "fit_weibull_aft", "load_model", "log_rank_statistic", "model_from_dict", "predict_aft_survival",
    "predict_cox_survival", "predict_rsf_survival", "save_model", "weibull_aft_loglik",
]
