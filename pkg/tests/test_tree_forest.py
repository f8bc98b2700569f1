import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetlife.curves import nelson_aalen, step_values
from fleetlife.exceptions import DimensionError, ParameterError, UnfittableParametersError
from fleetlife.models import fit_rsf, model_from_dict, predict_rsf_survival
from fleetlife.models.forest import RsfModel
from fleetlife.models.tree import Tree, best_logrank_split, best_ls_split, log_rank_statistic

from helpers import make_ds


def test_log_rank_two_plus_two():
    # one event time with Y=4, d=2, Y_left=2: O-E = 2 - 1 = 1, V = 2*2*2*2 / (16*3) = 1/3
    stat = log_rank_statistic([1, 1], [1, 1], [10, 10], [0, 0])
    assert stat == pytest.approx(np.sqrt(3.0), abs=1e-14)


def test_log_rank_identical_groups_and_zero_variance():
    assert log_rank_statistic([1, 2, 3], [1, 0, 1], [1, 2, 3], [1, 0, 1]) == pytest.approx(0.0, abs=1e-14)
    # a single subject per group, both failing at once: Y - 1 = 1, d = Y, so V = 0
    assert log_rank_statistic([2], [1], [2], [1]) == 0.0


def test_log_rank_needs_data():
    with pytest.raises(ValueError):
        log_rank_statistic([], [], [1], [1])
    with pytest.raises(ValueError):
        log_rank_statistic([1], [0], [2], [0])


groups = st.lists(st.tuples(st.integers(1, 6).map(float), st.integers(0, 1)), min_size=1, max_size=8)


@given(groups, groups)
@settings(max_examples=150, deadline=None)
def test_log_rank_antisymmetric(a, b):
    if not any(e for _, e in a + b):
        return
    at, ae = zip(*a)
    bt, be = zip(*b)
    assert log_rank_statistic(at, ae, bt, be) == pytest.approx(-log_rank_statistic(bt, be, at, ae), abs=1e-12)


def brute_force_split(x, time, event, min_leaf, min_events):
    best = None
    values = np.unique(x)
    for lo, hi in zip(values[:-1], values[1:]):
        thr = 0.5 * (lo + hi)
        left = x <= thr
        if left.sum() < min_leaf or (~left).sum() < min_leaf:
            continue
        if event[left].sum() < min_events or event[~left].sum() < min_events:
            continue
        s = log_rank_statistic(time[left], event[left], time[~left], event[~left])
        if s != 0 and (best is None or abs(s) > best[0] + 1e-12):
            best = (abs(s), thr, s)
    return best


@given(st.integers(0, 100_000))
@settings(max_examples=80, deadline=None)
def test_sweep_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 30))
    x = rng.integers(0, 6, n).astype(float)
    time = rng.integers(1, 8, n).astype(float)
    event = rng.integers(0, 2, n)
    min_leaf, min_events = int(rng.integers(1, 3)), int(rng.integers(1, 2))
    fast = best_logrank_split(x, time, event, min_leaf, min_events)
    slow = brute_force_split(x, time, event, min_leaf, min_events)
    if slow is None:
        assert fast is None or fast[0] == pytest.approx(0.0, abs=1e-9)
        return
    assert fast is not None
    assert fast[0] == pytest.approx(slow[0], rel=1e-9)
    assert fast[2] == pytest.approx(slow[2], rel=1e-9)


def test_least_squares_split():
    gain, thr = best_ls_split(np.array([1.0, 2.0, 3.0, 4.0]), np.array([0.0, 0.0, 1.0, 1.0]), 1)
    assert thr == 2.5
    assert gain == pytest.approx(1.0)  # total SS 1, both halves pure
    assert best_ls_split(np.ones(4), np.arange(4.0), 1) is None


def _fleet(n=300, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 3))
    time = np.ceil(rng.exponential(np.exp(1.0 - X[:, 0]), n) * 10)
    event = (rng.random(n) < 0.7).astype(int)
    return make_ds(time, event, X=X, names=["a", "b", "c"])


def test_single_leaf_tree_is_in_bag_nelson_aalen():
    ds = _fleet(60)
    m = fit_rsf(ds, n_trees=1, min_leaf_size=60, seed=7)
    assert m.trees[0].n_leaves == 1
    boot = np.random.default_rng(np.random.SeedSequence(7).spawn(1)[0]).integers(0, 60, size=60)
    t, h = nelson_aalen(ds.time[boot], ds.event[boot])
    grid = np.unique(np.concatenate([t, t + 0.5, [0.0]]))
    H = m.cumulative_hazard_matrix(ds.X[:3], grid)
    np.testing.assert_array_equal(H, np.tile(step_values(t, h, grid), (3, 1)))
    np.testing.assert_array_equal(predict_rsf_survival(m, ds.X[0])(grid), np.exp(-step_values(t, h, grid)))


def test_two_tree_average_by_hand():
    ds = _fleet(80, seed=3)
    m = fit_rsf(ds, n_trees=2, min_leaf_size=10, min_leaf_events=2, seed=1)
    grid = np.linspace(0, ds.time.max(), 40)
    x = ds.X[:4]
    by_hand = np.zeros((4, grid.size))
    for tree, leaves in zip(m.trees, m.leaves):
        for r, lid in enumerate(tree.apply(x)):
            by_hand[r] += step_values(*leaves[lid], grid)
    np.testing.assert_allclose(m.survival_matrix(x, grid), np.exp(-by_hand / 2), atol=1e-15)


def test_leaves_respect_constraints():
    ds = _fleet(400, seed=4)
    m = fit_rsf(ds, n_trees=5, min_leaf_size=15, min_leaf_events=3, seed=2)
    children = np.random.SeedSequence(2).spawn(5)
    for tree, ss in zip(m.trees, children):
        boot = np.random.default_rng(ss).integers(0, 400, size=400)
        leaf_of = tree.apply(ds.X[boot])
        for lid in range(tree.n_leaves):
            assert np.sum(leaf_of == lid) >= 15
            assert ds.event[boot][leaf_of == lid].sum() >= 3


def test_separated_groups_match_group_estimates():
    rng = np.random.default_rng(0)
    g = np.repeat([0.0, 1.0], 200)
    time = np.where(g == 0, rng.uniform(1, 50, 400), rng.uniform(100, 150, 400)).round()
    event = np.ones(400, dtype=int)
    ds = make_ds(time, event, X=g[:, None], names=["g"])
    m = fit_rsf(ds, n_trees=100, min_leaf_size=15, min_leaf_events=3, seed=0)
    grid = np.linspace(0, 160, 321)
    for level in (0.0, 1.0):
        mask = g == level
        t, h = nelson_aalen(time[mask], event[mask])
        oracle = np.exp(-step_values(t, h, grid))
        pred = m.survival_matrix(np.array([[level]]), grid)[0]
        assert np.max(np.abs(pred - oracle)) < 0.05


def test_determinism_threads_and_round_trip():
    ds = _fleet(200, seed=5)
    a = fit_rsf(ds, n_trees=8, seed=3)
    b = fit_rsf(ds, n_trees=8, seed=3, n_jobs=4)
    grid = np.linspace(0, ds.time.max(), 25)
    np.testing.assert_array_equal(a.survival_matrix(ds.X, grid), b.survival_matrix(ds.X, grid))
    c = model_from_dict(a.to_dict())
    assert isinstance(c, RsfModel)
    np.testing.assert_array_equal(a.survival_matrix(ds.X, grid), c.survival_matrix(ds.X, grid))
    np.testing.assert_array_equal(a.risk_score(ds.X), c.risk_score(ds.X))
    assert not np.array_equal(a.survival_matrix(ds.X, grid), fit_rsf(ds, n_trees=8, seed=4).survival_matrix(ds.X, grid))


def test_survival_at_agrees_with_matrix():
    ds = _fleet(150, seed=6)
    m = fit_rsf(ds, n_trees=4, seed=0)
    t = ds.time[:20]
    full = m.survival_matrix(ds.X[:20], t)
    np.testing.assert_allclose(m.survival_at(ds.X[:20], t), np.diag(full), atol=1e-15)


def test_parameter_errors():
    ds = _fleet(50)
    with pytest.raises(UnfittableParametersError):
        fit_rsf(ds, min_leaf_events=int(ds.event.sum()) + 1)
    with pytest.raises(ParameterError):
        fit_rsf(ds, mtry=4)
    with pytest.raises(ParameterError):
        fit_rsf(ds, n_trees=0)
    m = fit_rsf(ds, n_trees=2)
    with pytest.raises(DimensionError):
        m.predict_curve(np.ones(2))


def test_tree_round_trip():
    t = Tree(np.array([0, -1, -1]), np.array([0.5, 0, 0]), np.array([1, -1, -1]), np.array([2, -1, -1]), np.array([-1, 0, 1]))
    again = Tree.from_dict(t.to_dict())
    np.testing.assert_array_equal(again.apply([[0.2], [0.5], [0.9]]), [0, 0, 1])


@given(st.integers(0, 1000))
@settings(max_examples=10, deadline=None)
def test_forest_curves_valid(seed):
    ds = _fleet(80, seed=seed)
    m = fit_rsf(ds, n_trees=3, min_leaf_size=5, seed=seed)
    for x in ds.X[:4]:
        c = m.predict_curve(x)
        assert np.all(np.diff(c.probs) <= 0) and np.all((c.probs >= 0) & (c.probs <= 1))
