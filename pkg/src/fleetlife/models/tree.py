"""Binary trees shared by the survival forest and gradient boosting.

A tree is stored as flat arrays; a subject goes left when
``x[feature] <= threshold``. Leaves carry an index into a payload list
that the owning model interprets (Nelson-Aalen hazards or boosting values).
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..curves import risk_table


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray  # -1 on leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray  # payload index on leaves, -1 on internal nodes

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.leaf >= 0))

    def apply(self, X) -> np.ndarray:
        """Payload index of the leaf reached by every row of ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.leaf[node]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "leaf")}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["leaf"], dtype=np.int64),
        )


class _TreeBuilder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.leaf = [], [], [], [], []
        self.payloads = []

    def node(self) -> int:
        for col, value in ((self.feature, -1), (self.threshold, 0.0), (self.left, -1), (self.right, -1), (self.leaf, -1)):
            col.append(value)
        return len(self.feature) - 1

    def make_leaf(self, nid, payload):
        self.leaf[nid] = len(self.payloads)
        self.payloads.append(payload)

    def make_split(self, nid, feature, threshold) -> tuple[int, int]:
        self.feature[nid], self.threshold[nid] = int(feature), float(threshold)
        lo, hi = self.node(), self.node()
        self.left[nid], self.right[nid] = lo, hi
        return lo, hi

    def build(self) -> tuple[Tree, list]:
        tree = Tree(
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=float),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.asarray(self.leaf, dtype=np.int64),
        )
        return tree, self.payloads


def grow_tree(n_rows, find_split, make_payload, max_depth=None):
    """Depth-first growth. ``find_split(rows, depth)`` returns
    ``(feature, threshold, left_mask)`` or ``None`` to stop."""
    b = _TreeBuilder()
    stack = [(b.node(), np.arange(n_rows), 0)]
    while stack:
        nid, rows, depth = stack.pop()
        split = None if (max_depth is not None and depth >= max_depth) else find_split(rows, depth)
        if split is None:
            b.make_leaf(nid, make_payload(rows))
            continue
        feature, threshold, go_left = split
        lo, hi = b.make_split(nid, feature, threshold)
        stack.append((hi, rows[~go_left], depth + 1))
        stack.append((lo, rows[go_left], depth + 1))
    return b.build()


# ---------------------------------------------------------------------------
# log-rank split search


def log_rank_statistic(left_time, left_event, right_time, right_event) -> float:
    """Standardized two-sample log-rank statistic (O - E) / sqrt(V) for the left group.

    Positive when the left group has more events than expected, i.e. worse
    survival. Returns 0 when the variance vanishes.
    """
    lt, rt = np.asarray(left_time, dtype=float), np.asarray(right_time, dtype=float)
    le, re = np.asarray(left_event).astype(bool), np.asarray(right_event).astype(bool)
    if lt.size == 0 or rt.size == 0:
        raise ValueError("both groups must be non-empty")
    time = np.concatenate([lt, rt])
    event = np.concatenate([le, re])
    if not event.any():
        raise ValueError("log-rank statistic needs at least one event")
    t, d, y = risk_table(time, event)
    yl = lt.size - np.searchsorted(np.sort(lt), t, side="left")
    lev = np.sort(lt[le])
    dl = np.searchsorted(lev, t, side="right") - np.searchsorted(lev, t, side="left")
    o_minus_e = np.sum(dl - yl * d / y)
    with np.errstate(divide="ignore", invalid="ignore"):
        v_terms = np.where(y > 1, yl * (y - yl) * d * (y - d) / (y**2 * (y - 1.0)), 0.0)
    v = float(np.sum(v_terms))
    if v <= 1e-12:
        return 0.0
    return float(o_minus_e / np.sqrt(v))


@numba.njit(cache=True, nogil=True)
def _bit_add(tree, i, value):
    i += 1
    while i < tree.size:
        tree[i] += value
        i += i & (-i)


@numba.njit(cache=True, nogil=True)
def _bit_prefix(tree, i):
    # sum over indices [0, i)
    s = 0.0
    while i > 0:
        s += tree[i]
        i -= i & (-i)
    return s


@numba.njit(cache=True, nogil=True)
def _logrank_sweep(x, k, ev, A, C, Cp, min_leaf, min_events, total_events):
    """Best split of rows sorted by ``x``; returns (best |stat|, position, signed stat).

    ``k[i]`` is the number of node event times <= the row's time, ``A``, ``C``
    and ``Cp`` are prefix sums (length m + 1) of d/Y, c and c/Y with
    c = d (Y - d) / (Y (Y - 1)).
    """
    n = x.size
    m1 = A.size
    cnt_tree = np.zeros(m1 + 1)
    sum_tree = np.zeros(m1 + 1)
    n_left = 0
    o_left = 0.0
    e_left = 0.0
    c_left = 0.0
    q = 0.0
    best = 0.0
    best_pos = -1
    best_signed = 0.0
    for i in range(n - 1):
        ki = k[i]
        below_cnt = _bit_prefix(cnt_tree, ki)
        below_sum = _bit_prefix(sum_tree, ki)
        r = Cp[ki] * (n_left - below_cnt) + below_sum
        q += 2.0 * r + Cp[ki]
        _bit_add(cnt_tree, ki, 1.0)
        _bit_add(sum_tree, ki, Cp[ki])
        n_left += 1
        o_left += ev[i]
        e_left += A[ki]
        c_left += C[ki]
        if x[i] == x[i + 1]:
            continue
        if n_left < min_leaf or n - n_left < min_leaf:
            continue
        if o_left < min_events or total_events - o_left < min_events:
            continue
        v = c_left - q
        if v <= 1e-12:
            continue
        stat = (o_left - e_left) / np.sqrt(v)
        if abs(stat) > best + 1e-12:
            best = abs(stat)
            best_pos = i
            best_signed = stat
    return best, best_pos, best_signed


def node_logrank_tables(time, event):
    """Per-node prefix tables for :func:`_logrank_sweep`."""
    t, d, y = risk_table(time, event)
    k = np.searchsorted(t, time, side="right").astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(y > 1, d * (y - d) / (y * (y - 1.0)), 0.0)
    A = np.concatenate(([0.0], np.cumsum(d / y)))
    C = np.concatenate(([0.0], np.cumsum(c)))
    Cp = np.concatenate(([0.0], np.cumsum(c / y)))
    return k, A, C, Cp


def best_logrank_split(x, time, event, min_leaf, min_events):
    """Exhaustive log-rank split on one feature.

    Returns ``(abs_stat, threshold, signed_stat)`` or ``None`` when no
    admissible split exists. Thresholds are midpoints between consecutive
    distinct values.
    """
    order = np.argsort(x, kind="stable")
    xs = np.ascontiguousarray(x[order], dtype=float)
    ev = np.ascontiguousarray(event[order], dtype=float)
    k, A, C, Cp = node_logrank_tables(time, event)
    best, pos, signed = _logrank_sweep(
        xs, np.ascontiguousarray(k[order]), ev, A, C, Cp, int(min_leaf), float(min_events), float(ev.sum())
    )
    if pos < 0:
        return None
    return best, 0.5 * (xs[pos] + xs[pos + 1]), signed


# ---------------------------------------------------------------------------
# least-squares split search


def best_ls_split(x, g, min_leaf):
    """Split on one feature minimizing the residual sum of squares of ``g``.

    Returns ``(gain, threshold)`` or ``None``.
    """
    n = x.size
    if n < 2 * min_leaf:
        return None
    order = np.argsort(x, kind="stable")
    xs, gs = x[order], g[order]
    csum = np.cumsum(gs)
    total = csum[-1]
    n_left = np.arange(1, n)
    s_left = csum[:-1]
    gain = s_left**2 / n_left + (total - s_left) ** 2 / (n - n_left) - total**2 / n
    valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not valid.any():
        return None
    gain = np.where(valid, gain, -np.inf)
    pos = int(np.argmax(gain))
    return float(gain[pos]), 0.5 * (xs[pos] + xs[pos + 1])
