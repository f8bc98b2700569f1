"""Gradient-boosted Cox model built from least-squares regression trees."""

from __future__ import annotations

import numpy as np

from ..curves import SurvivalCurve, step_values
from ..dataset import Dataset
from ..exceptions import FleetlifeError, ParameterError
from .base import SurvivalModel
from .cox import breslow_cumulative_hazard
from .tree import Tree, best_ls_split, grow_tree


def cox_partial_loglik_scores(scores, time, event) -> float:
    """Breslow log partial likelihood as a function of per-subject risk scores."""
    scores = np.asarray(scores, dtype=float)
    time = np.asarray(time, dtype=float)
    ev = np.asarray(event).astype(bool)
    if not ev.any():
        return 0.0
    shift = scores.max()
    cum = np.cumsum(np.exp(scores - shift)[np.argsort(-time, kind="stable")])
    pos = time.size - np.searchsorted(np.sort(time), time[ev], side="left") - 1
    return float(np.sum(scores[ev] - shift - np.log(cum[pos])))


def cox_negative_gradient(scores, time, event) -> np.ndarray:
    """Derivative of the Breslow log partial likelihood with respect to each score.

    Equals delta_i - exp(s_i) * H(y_i), the martingale residual under the
    Breslow cumulative hazard H of the current scores.
    """
    scores = np.asarray(scores, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    if not np.any(event):
        return np.zeros(scores.size)
    shift = scores.max()
    event_times, h = breslow_cumulative_hazard(scores - shift, time, event)
    return event - np.exp(scores - shift) * step_values(event_times, h, time)


class GbCoxModel(SurvivalModel):
    kind = "gb_cox"

    def __init__(self, trees, leaf_values, learning_rate, columns, event_times, cum_hazard, hyperparameters, diagnostics=None):
        self.trees: list[Tree] = list(trees)
        self.leaf_values = [np.asarray(v, dtype=float) for v in leaf_values]
        self.learning_rate = float(learning_rate)
        self.columns = tuple(columns)
        self.event_times = np.asarray(event_times, dtype=float)
        self.cum_hazard = np.asarray(cum_hazard, dtype=float)
        self.hyperparameters = dict(hyperparameters)
        self.diagnostics = dict(diagnostics or {})

    @property
    def n_stages(self) -> int:
        return len(self.trees)

    def risk_score(self, data):
        X = self.features(data)
        score = np.zeros(X.shape[0])
        for tree, values in zip(self.trees, self.leaf_values):
            score += self.learning_rate * values[tree.apply(X)]
        return score

    def survival_matrix(self, data, times):
        h0 = step_values(self.event_times, self.cum_hazard, np.atleast_1d(times))
        return np.exp(-np.outer(np.exp(self.risk_score(data)), h0))

    def survival_at(self, data, t):
        rel = np.exp(self.risk_score(data))
        return np.exp(-step_values(self.event_times, self.cum_hazard, np.broadcast_to(t, rel.shape)) * rel)

    def predict_curve(self, x) -> SurvivalCurve:
        rel = np.exp(self.risk_score(x))[0]
        return SurvivalCurve(self.event_times, np.exp(-self.cum_hazard * rel))

    def _params(self):
        return {
            "trees": [t.to_dict() for t in self.trees],
            "leaf_values": self.leaf_values,
            "learning_rate": self.learning_rate,
            "event_times": self.event_times,
            "cum_hazard": self.cum_hazard,
        }

    @classmethod
    def _from_params(cls, params, columns, hyperparameters, diagnostics):
        return cls(
            [Tree.from_dict(d) for d in params["trees"]], params["leaf_values"], params["learning_rate"],
            columns, params["event_times"], params["cum_hazard"], hyperparameters, diagnostics,
        )


def _fit_regression_tree(X, g, max_depth, min_leaf_size):
    def find_split(rows, depth):
        best = None
        for j in range(X.shape[1]):
            found = best_ls_split(X[rows, j], g[rows], min_leaf_size)
            if found is not None and found[0] > 0 and (best is None or found[0] > best[0] + 1e-12):
                best = (found[0], j, found[1])
        if best is None:
            return None
        _, j, threshold = best
        return j, threshold, X[rows, j] <= threshold

    return grow_tree(X.shape[0], find_split, lambda rows: float(g[rows].mean()), max_depth)


def fit_gb_cox(
    train: Dataset,
    n_stages: int = 200,
    learning_rate: float = 0.05,
    max_depth: int = 3,
    min_leaf_size: int = 15,
    subsample: float = 0.8,
    seed: int = 0,
    columns=None,
) -> GbCoxModel:
    """Stagewise boosting of the Cox partial likelihood, starting from zero scores."""
    if not (isinstance(n_stages, (int, np.integer)) and n_stages >= 0):
        raise ParameterError(f"n_stages must be a non-negative integer, got {n_stages!r}")
    if not 0 < learning_rate <= 1:
        raise ParameterError(f"learning_rate must lie in (0, 1], got {learning_rate!r}")
    if max_depth < 1 or min_leaf_size < 1:
        raise ParameterError("max_depth and min_leaf_size must be >= 1")
    if not 0 < subsample <= 1:
        raise ParameterError(f"subsample must lie in (0, 1], got {subsample!r}")
    if train.n_events < 1:
        raise FleetlifeError("gradient-boosted Cox needs at least one event")
    columns = list(columns) if columns is not None else list(train.feature_names)
    X = train.matrix(columns)
    time, event = np.asarray(train.time, dtype=float), np.asarray(train.event)
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    scores = np.zeros(n)
    losses = [-cox_partial_loglik_scores(scores, time, event)]
    trees, values = [], []
    for _ in range(n_stages):
        g = cox_negative_gradient(scores, time, event)
        rows = np.sort(rng.choice(n, size=max(1, round(subsample * n)), replace=False)) if subsample < 1 else np.arange(n)
        tree, leaf_means = _fit_regression_tree(X[rows], g[rows], max_depth, min_leaf_size)
        leaf_means = np.asarray(leaf_means, dtype=float)
        scores = scores + learning_rate * leaf_means[tree.apply(X)]
        trees.append(tree)
        values.append(leaf_means)
        losses.append(-cox_partial_loglik_scores(scores, time, event))
    event_times, h0 = breslow_cumulative_hazard(scores, time, event)
    hyper = {
        "n_stages": n_stages, "learning_rate": learning_rate, "max_depth": max_depth,
        "min_leaf_size": min_leaf_size, "subsample": subsample, "seed": seed,
    }
    return GbCoxModel(trees, values, learning_rate, columns, event_times, h0, hyper, {"loss_trace": losses})
