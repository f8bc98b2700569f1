"""Random survival forest with log-rank splits and Nelson-Aalen leaves."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..curves import SurvivalCurve, nelson_aalen, step_values
from ..dataset import Dataset
from ..exceptions import FleetlifeError, ParameterError, UnfittableParametersError
from .base import SurvivalModel
from .tree import Tree, best_logrank_split, grow_tree


class RsfModel(SurvivalModel):
    kind = "rsf"

    def __init__(self, trees, leaves, columns, mortality_times, hyperparameters, diagnostics=None):
        self.trees: list[Tree] = list(trees)
        # leaves[t][l] = (event_times, cumulative_hazard) of leaf l in tree t
        self.leaves = [[(np.asarray(lt, float), np.asarray(lh, float)) for lt, lh in tl] for tl in leaves]
        self.columns = tuple(columns)
        self.mortality_times = np.asarray(mortality_times, dtype=float)
        self.hyperparameters = dict(hyperparameters)
        self.diagnostics = dict(diagnostics or {})
        self._leaf_mortality = [
            np.array([step_values(t, h, self.mortality_times).sum() for t, h in tl]) for tl in self.leaves
        ]

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def cumulative_hazard_matrix(self, data, times) -> np.ndarray:
        X = self.features(data)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        total = np.zeros((X.shape[0], times.size))
        for tree, leaves in zip(self.trees, self.leaves):
            leaf_ids = tree.apply(X)
            for lid in np.unique(leaf_ids):
                lt, lh = leaves[lid]
                total[leaf_ids == lid] += step_values(lt, lh, times)
        return total / self.n_trees

    def survival_matrix(self, data, times):
        return np.exp(-self.cumulative_hazard_matrix(data, times))

    def survival_at(self, data, t):
        X = self.features(data)
        t = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
        total = np.zeros(X.shape[0])
        for tree, leaves in zip(self.trees, self.leaves):
            leaf_ids = tree.apply(X)
            for lid in np.unique(leaf_ids):
                rows = leaf_ids == lid
                lt, lh = leaves[lid]
                total[rows] += step_values(lt, lh, t[rows])
        return np.exp(-total / self.n_trees)

    def risk_score(self, data):
        """Ensemble mortality: averaged cumulative hazard summed over training event times."""
        X = self.features(data)
        score = np.zeros(X.shape[0])
        for tree, mort in zip(self.trees, self._leaf_mortality):
            score += mort[tree.apply(X)]
        return score / self.n_trees

    def predict_curve(self, x) -> SurvivalCurve:
        X = self.features(x)[:1]
        grids = [self.leaves[t][tree.apply(X)[0]][0] for t, tree in enumerate(self.trees)]
        grid = np.unique(np.concatenate(grids)) if grids else np.empty(0)
        if grid.size == 0:
            return SurvivalCurve.constant()
        surv = self.survival_matrix(X, grid)[0]
        return SurvivalCurve(grid, np.minimum.accumulate(surv))

    def _params(self):
        return {
            "trees": [t.to_dict() for t in self.trees],
            "leaves": [[[lt.tolist(), lh.tolist()] for lt, lh in tl] for tl in self.leaves],
            "mortality_times": self.mortality_times,
        }

    @classmethod
    def _from_params(cls, params, columns, hyperparameters, diagnostics):
        trees = [Tree.from_dict(d) for d in params["trees"]]
        return cls(trees, params["leaves"], columns, params["mortality_times"], hyperparameters, diagnostics)


def predict_rsf_survival(m: RsfModel, x) -> SurvivalCurve:
    return m.predict_curve(x)


def _grow_survival_tree(X, time, event, rng, mtry, min_leaf_size, min_leaf_events, max_depth):
    n, p = X.shape
    boot = rng.integers(0, n, size=n)
    Xb, tb, eb = X[boot], time[boot], event[boot]

    def find_split(rows, depth):
        if rows.size < 2 * min_leaf_size or eb[rows].sum() < 2 * min_leaf_events:
            return None
        best = None
        for j in rng.choice(p, size=mtry, replace=False):
            found = best_logrank_split(Xb[rows, j], tb[rows], eb[rows], min_leaf_size, min_leaf_events)
            if found is not None and (best is None or found[0] > best[0] + 1e-12):
                best = (found[0], int(j), found[1])
        if best is None or best[0] <= 0:
            return None
        _, j, threshold = best
        return j, threshold, Xb[rows, j] <= threshold

    def payload(rows):
        return nelson_aalen(tb[rows], eb[rows])

    return grow_tree(n, find_split, payload, max_depth)


def fit_rsf(
    train: Dataset,
    n_trees: int = 200,
    mtry: int | None = None,
    min_leaf_size: int = 15,
    min_leaf_events: int = 3,
    seed: int = 0,
    max_depth: int | None = None,
    columns=None,
    n_jobs: int = 1,
) -> RsfModel:
    """Grow ``n_trees`` survival trees on bootstrap samples.

    Each tree draws from its own child of ``SeedSequence(seed)``, so the
    forest is identical for any ``n_jobs``.
    """
    columns = list(columns) if columns is not None else list(train.feature_names)
    X = train.matrix(columns)
    time = np.asarray(train.time, dtype=float)
    event = np.asarray(train.event, dtype=np.int64)
    p = X.shape[1]
    mtry = math.ceil(math.sqrt(p)) if mtry is None else int(mtry)
    if n_trees < 1 or (p and not 1 <= mtry <= p) or min_leaf_size < 1 or min_leaf_events < 1:
        raise ParameterError(f"invalid RSF parameters n_trees={n_trees} mtry={mtry} min_leaf_size={min_leaf_size}")
    if event.sum() < 1:
        raise FleetlifeError("random survival forest needs at least one event")
    if min_leaf_events > event.sum():
        raise UnfittableParametersError(
            f"min_leaf_events={min_leaf_events} exceeds the {int(event.sum())} events in the training data"
        )
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_trees)]

    def grow(rng):
        return _grow_survival_tree(X, time, event, rng, mtry, min_leaf_size, min_leaf_events, max_depth)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            grown = list(pool.map(grow, rngs))
    else:
        grown = [grow(r) for r in rngs]
    hyper = {
        "n_trees": n_trees, "mtry": mtry, "min_leaf_size": min_leaf_size,
        "min_leaf_events": min_leaf_events, "seed": seed, "max_depth": max_depth,
    }
    diagnostics = {"leaves_per_tree": [t.n_leaves for t, _ in grown]}
    return RsfModel(
        [t for t, _ in grown], [leaves for _, leaves in grown], columns,
        np.unique(time[event == 1]), hyper, diagnostics,
    )
