"""Weibull accelerated failure time model.

log T = x.beta + sigma * eps with eps standard minimum-Gumbel, so
S(t | x) = exp(-(t / exp(x.beta)) ** (1 / sigma)). The fit runs damped Newton
steps in (beta / sigma, 1 / sigma), where the censored log-likelihood is
concave; :func:`weibull_aft_loglik` exposes it in (beta, log sigma).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..curves import SurvivalCurve
from ..dataset import Dataset
from ..exceptions import ConvergenceError, InsufficientDataError
from .base import SurvivalModel


@dataclass(frozen=True)
class AftOptions:
    max_iter: int = 200
    tol: float = 1e-8
    max_halvings: int = 40
    grid_points: int = 200


def weibull_aft_loglik(theta, X1, time, event):
    """Log-likelihood, gradient and Hessian in ``theta = (beta..., log sigma)``.

    ``X1`` already carries the intercept column. Censored rows with zero
    observed time contribute nothing and may be passed as-is.
    """
    X1 = np.asarray(X1, dtype=float)
    time = np.asarray(time, dtype=float)
    ev = np.asarray(event, dtype=float)
    keep = time > 0
    if np.any(ev[~keep] > 0):
        raise ValueError("events need a positive observed time")
    X1, time, ev = X1[keep], time[keep], ev[keep]
    beta, log_sigma = np.asarray(theta[:-1], dtype=float), float(theta[-1])
    sigma = np.exp(log_sigma)
    log_t = np.log(time)
    z = (log_t - X1 @ beta) / sigma
    ez = np.exp(z)
    ll = float(np.sum(ev * (z - log_sigma - log_t) - ez))
    a = ev - ez
    g_beta = -(X1.T @ a) / sigma
    g_s = -np.sum(a * z) - np.sum(ev)
    grad = np.append(g_beta, g_s)
    h_bb = -(X1.T * ez) @ X1 / sigma**2
    h_bs = X1.T @ (a - ez * z) / sigma
    h_ss = np.sum(a * z - ez * z**2)
    p = beta.size
    hess = np.empty((p + 1, p + 1))
    hess[:p, :p] = h_bb
    hess[:p, p] = hess[p, :p] = h_bs
    hess[p, p] = h_ss
    return ll, grad, hess


class WeibullAftModel(SurvivalModel):
    kind = "weibull_aft"

    def __init__(self, beta, sigma, columns, time_max, log_likelihood=None, diagnostics=None, hyperparameters=None):
        self.beta = np.asarray(beta, dtype=float)  # first entry is the intercept
        self.sigma = float(sigma)
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        self.columns = tuple(columns)
        self.time_max = float(time_max)
        self.log_likelihood = log_likelihood
        self.diagnostics = dict(diagnostics or {})
        self.hyperparameters = dict(hyperparameters or {})

    def linear_predictor(self, data):
        return self.beta[0] + self.features(data) @ self.beta[1:]

    def risk_score(self, data):
        return -self.linear_predictor(data)

    def median(self, data):
        return np.exp(self.linear_predictor(data)) * np.log(2.0) ** self.sigma

    @staticmethod
    def _survival(t, lp, sigma):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return np.exp(-np.exp((np.log(np.maximum(t, 0.0)) - lp) / sigma))

    def survival_matrix(self, data, times):
        lp = self.linear_predictor(data)
        return self._survival(np.atleast_1d(times)[None, :], lp[:, None], self.sigma)

    def survival_at(self, data, t):
        lp = self.linear_predictor(data)
        return self._survival(np.broadcast_to(t, lp.shape), lp, self.sigma)

    def default_grid(self, points: int = 200) -> np.ndarray:
        return np.geomspace(self.time_max * 1e-3, self.time_max, points)

    def predict_curve(self, x, grid=None) -> SurvivalCurve:
        grid = self.default_grid(self.hyperparameters.get("grid_points", 200)) if grid is None else np.asarray(grid)
        return SurvivalCurve(grid, self.survival_matrix(x, grid)[0])

    def _params(self):
        return {"beta": self.beta, "sigma": self.sigma, "time_max": self.time_max, "log_likelihood": self.log_likelihood}

    @classmethod
    def _from_params(cls, params, columns, hyperparameters, diagnostics):
        return cls(
            params["beta"], params["sigma"], columns, params["time_max"], params["log_likelihood"],
            diagnostics, hyperparameters,
        )


def predict_aft_survival(m: WeibullAftModel, x, grid=None) -> SurvivalCurve:
    return m.predict_curve(x, grid)


def _initial_theta(X1, time, event):
    pos = time > 0
    rows = pos & (event == 1)
    if rows.sum() <= X1.shape[1]:
        rows = pos
    coef, *_ = np.linalg.lstsq(X1[rows], np.log(time[rows]), rcond=None)
    resid = np.log(time[rows]) - X1[rows] @ coef
    sigma = max(np.std(resid) * np.sqrt(6) / np.pi, 0.1)
    return np.append(coef, np.log(sigma))


def _concave_loglik(phi, X1, log_t, ev):
    """Log-likelihood in ``phi = (gamma..., alpha)`` with gamma = beta / sigma, alpha = 1 / sigma.

    z = alpha * log t - X1 @ gamma is linear in phi, so the log-likelihood is
    concave and damped Newton steps cannot stall on indefinite Hessians.
    Dropped here: the constant -sum(event * log t).
    """
    gamma, alpha = phi[:-1], phi[-1]
    z = alpha * log_t - X1 @ gamma
    with np.errstate(over="ignore"):
        ez = np.exp(z)
    n_ev = ev.sum()
    ll = float(np.sum(ev * z - ez) + n_ev * np.log(alpha))
    a = ev - ez
    grad = np.append(-(X1.T @ a), a @ log_t + n_ev / alpha)
    p = gamma.size
    hess = np.empty((p + 1, p + 1))
    hess[:p, :p] = -(X1.T * ez) @ X1
    hess[:p, p] = hess[p, :p] = X1.T @ (ez * log_t)
    hess[p, p] = -(ez @ log_t**2) - n_ev / alpha**2
    return ll, grad, hess


def fit_weibull_aft_arrays(X, time, event, columns, opts: AftOptions | None = None) -> WeibullAftModel:
    opts = opts or AftOptions()
    X = np.asarray(X, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    if np.any(time < 0) or np.any((event == 1) & (time <= 0)):
        raise InsufficientDataError("Weibull AFT needs non-negative times and positive event times")
    if np.unique(time[event == 1]).size < 2:
        raise InsufficientDataError("Weibull AFT needs at least two distinct event times")
    keep = time > 0  # zero-time censored rows carry no information
    means = X[keep].mean(axis=0) if X.shape[1] else np.zeros(0)
    Xc1 = np.column_stack([np.ones(int(keep.sum())), X[keep] - means])
    log_t, ev = np.log(time[keep]), event[keep].astype(float)

    theta0 = _initial_theta(Xc1, time[keep], event[keep])
    sigma0 = np.exp(theta0[-1])
    phi = np.append(theta0[:-1] / sigma0, 1.0 / sigma0)
    ll, grad, hess = _concave_loglik(phi, Xc1, log_t, ev)
    grad_tol = opts.tol * max(1.0, ev.sum())  # per-event gradient scale
    it = 0
    while True:
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        if np.max(np.abs(grad)) < grad_tol or np.max(np.abs(step)) < 1e-12 * (1 + np.max(np.abs(phi))):
            break
        if it >= opts.max_iter:
            raise ConvergenceError(
                f"Weibull AFT did not converge in {opts.max_iter} iterations (gradient {np.max(np.abs(grad)):.3g})",
                last_iterate=phi.tolist(),
            )
        it += 1
        # once the predicted gain is below rounding noise in ll, comparing ll values says
        # nothing; the quadratic model is exact there, so the full step is taken
        settled = float(grad @ step) < 1e-10 * (1.0 + abs(ll))
        scale = 1.0
        for _ in range(opts.max_halvings):
            cand = phi + scale * step
            if cand[-1] > 0:
                ll_new, grad_new, hess_new = _concave_loglik(cand, Xc1, log_t, ev)
                if np.isfinite(ll_new) and (ll_new >= ll or settled):
                    break
            scale *= 0.5
        else:
            if np.max(np.abs(grad)) < 1e3 * grad_tol:
                break  # flat at working precision
            raise ConvergenceError("Weibull AFT line search failed", last_iterate=phi.tolist())
        phi, ll, grad, hess = cand, ll_new, grad_new, hess_new

    sigma = 1.0 / phi[-1]
    beta = phi[:-1] * sigma
    beta[0] -= means @ beta[1:]  # undo centering
    theta = np.append(beta, np.log(sigma))
    ll_full, grad_full, _ = weibull_aft_loglik(theta, np.column_stack([np.ones(len(time)), X]), time, event)
    diagnostics = {"iterations": it, "gradient_norm": float(np.max(np.abs(grad_full)))}
    return WeibullAftModel(beta, sigma, columns, float(time.max()), ll_full, diagnostics, asdict(opts))


def fit_weibull_aft(train: Dataset, opts: AftOptions | None = None, columns=None) -> WeibullAftModel:
    columns = list(columns) if columns is not None else train.design_columns()
    return fit_weibull_aft_arrays(train.matrix(columns), train.time, train.event, columns, opts)
