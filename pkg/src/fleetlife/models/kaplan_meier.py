"""Kaplan-Meier product-limit estimator."""

from __future__ import annotations

import numpy as np

from ..curves import SurvivalCurve, risk_table
from ..dataset import Dataset
from ..exceptions import EmptyInputError
from .base import SurvivalModel


class KaplanMeierModel(SurvivalModel):
    """Population-level curve; covariates are ignored."""

    kind = "km"

    def __init__(self, event_times, d, r):
        self.event_times = np.asarray(event_times, dtype=float)
        self.d = np.asarray(d, dtype=int)
        self.r = np.asarray(r, dtype=int)
        self.curve = (
            SurvivalCurve(self.event_times, np.cumprod(1.0 - self.d / self.r))
            if self.event_times.size
            else SurvivalCurve.constant()
        )
        self.columns = ()
        self.hyperparameters = {}
        self.diagnostics = {"n_event_times": int(self.event_times.size)}

    def _n(self, data) -> int:
        return len(data) if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data)).shape[0]

    def features(self, data):
        return np.empty((self._n(data), 0))

    def survival_matrix(self, data, times):
        values = np.atleast_1d(self.curve(np.asarray(times, dtype=float)))
        return np.tile(values, (self._n(data), 1))

    def survival_at(self, data, t):
        return np.broadcast_to(np.atleast_1d(self.curve(np.asarray(t, dtype=float))), (self._n(data),)).copy()

    def risk_score(self, data):
        return np.zeros(self._n(data))

    def predict_curve(self, x=None) -> SurvivalCurve:
        return self.curve

    def _params(self):
        return {"event_times": self.event_times, "d": self.d, "r": self.r}

    @classmethod
    def _from_params(cls, params, columns, hyperparameters, diagnostics):
        return cls(params["event_times"], params["d"], params["r"])


def fit_kaplan_meier(train: Dataset) -> KaplanMeierModel:
    if len(train) == 0:
        raise EmptyInputError("Kaplan-Meier needs at least one record")
    return KaplanMeierModel(*risk_table(train.time, train.event))
