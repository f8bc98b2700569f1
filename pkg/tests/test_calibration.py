import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetlife.calibration import (
    CalibrationPair,
    IsotonicMap,
    apply_isotonic,
    build_calibration_pairs,
    fit_isotonic,
    fit_isotonic_arrays,
    pava,
)
from fleetlife.dataset import PredictionWindow
from fleetlife.exceptions import DomainError, InsufficientDataError

from helpers import make_ds


def exhaustive_isotonic(y, w):
    """Best monotone fit over every partition of the sequence into contiguous pools."""
    n = len(y)
    best, best_cost = None, np.inf
    for cuts in itertools.product([0, 1], repeat=n - 1):
        bounds = [0] + [k + 1 for k, c in enumerate(cuts) if c] + [n]
        fit = np.empty(n)
        for a, b in zip(bounds[:-1], bounds[1:]):
            fit[a:b] = np.dot(w[a:b], y[a:b]) / w[a:b].sum()
        if np.any(np.diff(fit) < -1e-12):
            continue
        cost = np.dot(w, (y - fit) ** 2)
        if cost < best_cost - 1e-12:
            best, best_cost = fit, cost
    return best, best_cost


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0.1, 5)), min_size=1, max_size=8))
@settings(max_examples=200, deadline=None)
def test_pava_matches_exhaustive_search(rows):
    y = np.array([r[0] for r in rows])
    w = np.array([r[1] for r in rows])
    fit = pava(y, w)
    _, cost = exhaustive_isotonic(y, w)
    assert np.all(np.diff(fit) >= -1e-12)
    assert np.dot(w, (y - fit) ** 2) == pytest.approx(cost, rel=1e-9, abs=1e-12)


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1), st.floats(0.1, 5)), min_size=2, max_size=30))
@settings(max_examples=150, deadline=None)
def test_fit_preserves_weighted_mean_and_order(rows):
    p, y, w = (np.array(c, dtype=float) for c in zip(*rows))
    m = fit_isotonic_arrays(p, y, w)
    r = apply_isotonic(m, p)
    assert np.dot(w, r) / w.sum() == pytest.approx(np.dot(w, y) / w.sum(), abs=1e-9)
    order = np.argsort(p)
    assert np.all(np.diff(r[order]) >= 0)


def test_pool_of_two_violators():
    m = fit_isotonic([CalibrationPair(0.2, 1), CalibrationPair(0.3, 0)])
    np.testing.assert_allclose(apply_isotonic(m, np.array([0.2, 0.3])), [0.5, 0.5])


def test_monotone_labels_unchanged():
    m = fit_isotonic([CalibrationPair(0.1, 0), CalibrationPair(0.2, 1), CalibrationPair(0.3, 1)])
    np.testing.assert_array_equal(apply_isotonic(m, np.array([0.1, 0.2, 0.3])), [0, 1, 1])


def test_weighted_pool():
    m = fit_isotonic([CalibrationPair(0.2, 1, 3.0), CalibrationPair(0.3, 0, 1.0)])
    np.testing.assert_allclose(apply_isotonic(m, np.array([0.2, 0.3])), [0.75, 0.75])


def test_tied_probabilities_take_the_pooled_value():
    m = fit_isotonic_arrays([0.4, 0.4, 0.1], [0, 1, 0])
    np.testing.assert_array_equal(m.breakpoints, [0.1, 0.4])
    np.testing.assert_allclose(m.values, [0.0, 0.5])


def test_apply_clamps_and_steps():
    m = IsotonicMap(np.array([0.2, 0.5]), np.array([0.1, 0.7]))
    assert apply_isotonic(m, 0.0) == 0.1
    assert apply_isotonic(m, 0.2) == 0.1
    assert apply_isotonic(m, 0.49) == 0.1
    assert apply_isotonic(m, 0.5) == 0.7
    assert apply_isotonic(m, 1.0) == 0.7
    for bad in (-0.1, 1.1, np.nan):
        with pytest.raises(DomainError):
            apply_isotonic(m, bad)
    assert IsotonicMap.from_dict(m.to_dict()).to_dict() == m.to_dict()


def test_invalid_inputs():
    with pytest.raises(InsufficientDataError):
        fit_isotonic([CalibrationPair(0.5, 1)])
    with pytest.raises(DomainError):
        CalibrationPair(1.2, 0)
    with pytest.raises(DomainError):
        CalibrationPair(0.5, 2)
    with pytest.raises(DomainError):
        CalibrationPair(0.5, 0, 0.0)
    with pytest.raises(ValueError):
        IsotonicMap(np.array([0.1, 0.2]), np.array([0.5, 0.4]))


def test_build_pairs_on_a_toy_window():
    w = PredictionWindow("2023-01-01", "2024-01-01")
    truth = make_ds(
        [100.0, 50.0, 60.0],
        [0, 1, 0],
        install="2022-01-01",
        last_log=["2024-02-01", "2023-05-01", "2023-06-01"],
        ids=["alive", "failed", "lost"],
    )
    probs = {"alive": 0.1, "failed": 0.4, "lost": 0.3}
    pairs = build_calibration_pairs(probs, truth, w)
    assert pairs == [CalibrationPair(0.1, 0, 1.0), CalibrationPair(0.4, 1, 1.0)]
    with pytest.raises(InsufficientDataError):
        build_calibration_pairs({"lost": 0.3}, truth, w)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=20), st.lists(st.floats(0, 1), min_size=1, max_size=30))
@settings(max_examples=100, deadline=None)
def test_map_is_monotone(p, grid):
    y = (np.arange(len(p)) % 2).astype(float)
    m = fit_isotonic_arrays(p, y)
    out = apply_isotonic(m, np.sort(np.array(grid)))
    assert np.all(np.diff(np.atleast_1d(out)) >= 0)
    assert np.all((out >= 0) & (out <= 1))
