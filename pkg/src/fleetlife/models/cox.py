"""Cox proportional hazards with Breslow ties, fitted by Newton-Raphson."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..curves import SurvivalCurve, step_values
from ..dataset import Dataset
from ..exceptions import DegenerateFeatureError, FleetlifeError, SeparationError
from .base import SurvivalModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoxOptions:
    max_iter: int = 100
    tol: float = 1e-8
    beta_bound: float = 50.0
    max_halvings: int = 40


def _risk_set_position(time):
    """Index, in descending-time order, of the last member of each subject's risk set."""
    asc = np.sort(time)
    return time.size - np.searchsorted(asc, time, side="left") - 1


def cox_log_partial_likelihood(beta, X, time, event, *, hessian=True):
    """Breslow log partial likelihood with gradient and (optionally) Hessian.

    Tied event times share one risk set: everyone with observed time >= t.
    """
    X = np.asarray(X, dtype=float)
    time = np.asarray(time, dtype=float)
    ev = np.asarray(event).astype(bool)
    beta = np.asarray(beta, dtype=float)
    eta = X @ beta
    shift = eta.max() if eta.size else 0.0
    w = np.exp(eta - shift)
    order = np.argsort(-time, kind="stable")
    pos = _risk_set_position(time)[ev]
    s0 = np.cumsum(w[order])[pos]
    wx = w[:, None] * X
    s1 = np.cumsum(wx[order], axis=0)[pos]
    ll = float(np.sum(eta[ev] - shift - np.log(s0)))
    mean_x = s1 / s0[:, None]
    grad = np.sum(X[ev] - mean_x, axis=0)
    if not hessian:
        return ll, grad
    wxx = wx[:, :, None] * X[:, None, :]
    s2 = np.cumsum(wxx[order], axis=0)[pos]
    hess = -np.sum(s2 / s0[:, None, None] - mean_x[:, :, None] * mean_x[:, None, :], axis=0)
    return ll, grad, hess


def breslow_cumulative_hazard(scores, time, event):
    """Breslow baseline cumulative hazard ``(event_times, H0)`` for fixed risk scores."""
    time = np.asarray(time, dtype=float)
    ev = np.asarray(event).astype(bool)
    event_times = np.unique(time[ev])
    if event_times.size == 0:
        return event_times, np.empty(0)
    w = np.exp(np.asarray(scores, dtype=float))
    order = np.argsort(-time, kind="stable")
    cum = np.cumsum(w[order])
    n_at_risk = time.size - np.searchsorted(np.sort(time), event_times, side="left")
    s0 = cum[n_at_risk - 1]
    ev_sorted = np.sort(time[ev])
    d = np.searchsorted(ev_sorted, event_times, side="right") - np.searchsorted(ev_sorted, event_times, side="left")
    return event_times, np.cumsum(d / s0)


class CoxModel(SurvivalModel):
    kind = "cox"

    def __init__(self, beta, feature_means, event_times, cum_hazard, columns, diagnostics=None, hyperparameters=None):
        self.beta = np.asarray(beta, dtype=float)
        self.feature_means = np.asarray(feature_means, dtype=float)
        self.event_times = np.asarray(event_times, dtype=float)
        self.cum_hazard = np.asarray(cum_hazard, dtype=float)
        self.columns = tuple(columns)
        self.diagnostics = dict(diagnostics or {})
        self.hyperparameters = dict(hyperparameters or {})

    def linear_predictor(self, data):
        return (self.features(data) - self.feature_means) @ self.beta

    def risk_score(self, data):
        return self.linear_predictor(data)

    def baseline_hazard(self, t):
        return step_values(self.event_times, self.cum_hazard, t)

    @property
    def baseline_survival(self) -> SurvivalCurve:
        return SurvivalCurve(self.event_times, np.exp(-self.cum_hazard))

    def survival_matrix(self, data, times):
        h0 = self.baseline_hazard(np.atleast_1d(times))
        return np.exp(-np.outer(np.exp(self.linear_predictor(data)), h0))

    def survival_at(self, data, t):
        rel = np.exp(self.linear_predictor(data))
        return np.exp(-self.baseline_hazard(np.broadcast_to(t, rel.shape)) * rel)

    def predict_curve(self, x) -> SurvivalCurve:
        rel = np.exp(self.linear_predictor(x))[0]
        probs = np.exp(-self.cum_hazard * rel)
        return SurvivalCurve(self.event_times, np.minimum.accumulate(probs) if probs.size else probs)

    def _params(self):
        return {
            "beta": self.beta,
            "feature_means": self.feature_means,
            "event_times": self.event_times,
            "cum_hazard": self.cum_hazard,
        }

    @classmethod
    def _from_params(cls, params, columns, hyperparameters, diagnostics):
        return cls(
            params["beta"], params["feature_means"], params["event_times"], params["cum_hazard"],
            columns, diagnostics, hyperparameters,
        )


def predict_cox_survival(m: CoxModel, x) -> SurvivalCurve:
    return m.predict_curve(x)


def fit_cox_arrays(X, time, event, columns, opts: CoxOptions | None = None) -> CoxModel:
    opts = opts or CoxOptions()
    X = np.asarray(X, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(bool)
    if not event.any():
        raise FleetlifeError("Cox regression needs at least one event")
    first_risk_set = time >= time[event].min()
    for j, name in enumerate(columns):
        if np.ptp(X[first_risk_set, j]) == 0:
            raise DegenerateFeatureError(name)
    means = X.mean(axis=0)
    Xc = X - means
    beta = np.zeros(X.shape[1])
    ll, grad, hess = cox_log_partial_likelihood(beta, Xc, time, event)
    trace = [ll]
    info0 = np.diag(-hess).copy()
    converged = False
    it = 0
    # the log-likelihood is a sum over events, so compare the per-event gradient with tol
    grad_tol = opts.tol * max(1, int(event.sum()))

    def separation(reason):
        j = int(np.argmax(np.abs(beta)))
        return SeparationError(f"{reason} after {it} iterations (monotone likelihood); largest coefficient on {columns[j]!r}")

    while it < opts.max_iter:
        # information collapsing towards zero means the risk sets have become perfectly ordered
        if it and np.any(np.diag(-hess) < 1e-10 * info0):
            raise separation("information matrix vanished")
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        # a vanishing gradient alone is not enough: under separation it decays like exp(-|beta|)
        # while the Newton step stays O(1)
        if np.max(np.abs(grad), initial=0.0) < grad_tol and np.max(np.abs(step), initial=0.0) < 1e-6:
            converged = True
            break
        it += 1
        # a predicted gain below rounding noise makes the ll comparison meaningless
        settled = float(grad @ step) < 1e-10 * (1.0 + abs(ll))
        scale = 1.0
        for _ in range(opts.max_halvings):
            cand = beta + scale * step
            ll_new, grad_new, hess_new = cox_log_partial_likelihood(cand, Xc, time, event)
            if ll_new >= ll or settled:
                break
            scale *= 0.5
        else:
            if np.max(np.abs(step)) > 1.0:
                raise separation("likelihood flat along a diverging direction")
            converged = np.max(np.abs(grad), initial=0.0) < grad_tol
            break
        beta, ll, grad, hess = cand, ll_new, grad_new, hess_new
        trace.append(ll)
        if np.max(np.abs(beta)) > opts.beta_bound:
            raise separation(f"|beta| exceeded {opts.beta_bound}")
    if not converged:
        logger.warning("Cox fit stopped after %d iterations, gradient norm %.3g", it, np.max(np.abs(grad)))
    event_times, h0 = breslow_cumulative_hazard(Xc @ beta, time, event)
    diagnostics = {
        "iterations": it,
        "gradient_norm": float(np.max(np.abs(grad), initial=0.0)),
        "converged": bool(converged),
        "log_likelihood": ll,
        "log_likelihood_trace": trace,
    }
    return CoxModel(beta, means, event_times, h0, columns, diagnostics, asdict(opts))


def fit_cox(train: Dataset, opts: CoxOptions | None = None, columns=None) -> CoxModel:
    """Fit on ``columns`` (default: reference-coded design columns of ``train``)."""
    columns = list(columns) if columns is not None else train.design_columns()
    return fit_cox_arrays(train.matrix(columns), train.time, train.event, columns, opts)
