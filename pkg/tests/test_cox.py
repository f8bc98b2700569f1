import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetlife.exceptions import DegenerateFeatureError, DimensionError, SeparationError
from fleetlife.models import CoxOptions, cox_log_partial_likelihood, fit_cox, model_from_dict, predict_cox_survival
from fleetlife.models.cox import CoxModel, breslow_cumulative_hazard, fit_cox_arrays
from fleetlife.synth import simulate_weibull_ph

from helpers import make_ds


def brute_force_partial_ll(beta, X, time, event):
    ll = 0.0
    for i in range(len(time)):
        if event[i]:
            at_risk = [k for k in range(len(time)) if time[k] >= time[i]]
            ll += X[i] @ beta - np.log(sum(np.exp(X[k] @ beta) for k in at_risk))
    return ll


def random_instance(rng, n=12, p=3):
    X = rng.standard_normal((n, p))
    time = rng.integers(1, 6, n).astype(float)  # plenty of ties
    event = rng.integers(0, 2, n)
    event[0] = 1
    return X, time, event


def test_log_partial_likelihood_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(20):
        X, time, event = random_instance(rng)
        beta = rng.normal(0, 0.7, 3)
        ll, _ = cox_log_partial_likelihood(beta, X, time, event, hessian=False)
        assert ll == pytest.approx(brute_force_partial_ll(beta, X, time, event), rel=1e-12, abs=1e-12)


def test_gradient_and_hessian_match_finite_differences():
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(50):
        X, time, event = random_instance(rng, n=int(rng.integers(5, 30)), p=int(rng.integers(1, 4)))
        beta = rng.normal(0, 0.5, X.shape[1])
        _, grad, hess = cox_log_partial_likelihood(beta, X, time, event)
        num_g = np.empty_like(beta)
        num_h = np.empty((beta.size, beta.size))
        for j in range(beta.size):
            e = np.zeros_like(beta)
            e[j] = h
            lp, gp = cox_log_partial_likelihood(beta + e, X, time, event, hessian=False)
            lm, gm = cox_log_partial_likelihood(beta - e, X, time, event, hessian=False)
            num_g[j] = (lp - lm) / (2 * h)
            num_h[:, j] = (gp - gm) / (2 * h)
        scale = max(1.0, np.max(np.abs(grad)))
        assert np.max(np.abs(grad - num_g)) / scale < 1e-6
        assert np.max(np.abs(hess - num_h)) / max(1.0, np.max(np.abs(hess))) < 1e-6


def grid_maximizer(X, time, event):
    def ll(b):
        return cox_log_partial_likelihood(np.array([b]), X, time, event, hessian=False)[0]

    coarse = np.arange(-10.0, 10.0 + 1e-9, 1e-3)
    b0 = coarse[np.argmax([ll(b) for b in coarse])]
    fine = np.arange(b0 - 1e-3, b0 + 1e-3, 1e-6)
    return fine[np.argmax([ll(b) for b in fine])]


def test_one_covariate_matches_grid_search():
    x = np.array([[0.0], [0.0], [1.0], [1.0]])
    time = np.array([2.0, 4.0, 1.0, 3.0])
    event = np.ones(4, dtype=int)
    m = fit_cox_arrays(x, time, event, ["x"])
    assert m.beta[0] == pytest.approx(grid_maximizer(x, time, event), abs=1e-4)
    assert m.diagnostics["converged"]


def test_separated_example_raises():
    # x = 1 units all fail before every x = 0 unit: the likelihood increases without bound
    x = np.array([[0.0], [0.0], [1.0], [1.0]])
    with pytest.raises(SeparationError):
        fit_cox_arrays(x, np.array([4.0, 3.0, 2.0, 1.0]), np.ones(4, dtype=int), ["x"])


def test_recovers_true_coefficients():
    X, time, event = simulate_weibull_ph(5000, [0.5, -0.3], censoring=0.3, seed=3)
    assert 1 - event.mean() == pytest.approx(0.3, abs=0.01)
    m = fit_cox_arrays(X, time, event, ["a", "b"])
    np.testing.assert_allclose(m.beta, [0.5, -0.3], atol=0.1)


def test_log_likelihood_trace_non_decreasing():
    X, time, event = simulate_weibull_ph(400, [1.0, -1.0, 0.3], seed=5)
    trace = fit_cox_arrays(X, time, event, ["a", "b", "c"]).diagnostics["log_likelihood_trace"]
    assert np.all(np.diff(trace) >= -1e-12)


def test_degenerate_feature_named():
    ds = make_ds([1, 2, 3, 4], [1, 1, 0, 1], X=[[1, 0], [1, 1], [1, 0], [1, 1]], names=["const", "flag"])
    with pytest.raises(DegenerateFeatureError, match="const"):
        fit_cox(ds)


def test_breslow_hand_example():
    t, h0 = breslow_cumulative_hazard(np.zeros(4), [1, 2, 2, 3], [1, 1, 0, 1])
    np.testing.assert_array_equal(t, [1, 2, 3])
    np.testing.assert_allclose(h0, [1 / 4, 1 / 4 + 1 / 3, 1 / 4 + 1 / 3 + 1], atol=1e-15)


def _toy_model(beta):
    return CoxModel(beta, np.zeros(len(beta)), [1.0, 2.0, 4.0], [0.1, 0.3, 0.9], [f"x{j}" for j in range(len(beta))])


def test_prediction_identities():
    m = _toy_model([np.log(2.0)])
    base = m.baseline_survival
    np.testing.assert_allclose(predict_cox_survival(m, [0.0]).probs, base.probs, atol=1e-15)
    np.testing.assert_allclose(predict_cox_survival(m, [1.0]).probs, base.probs**2, atol=1e-15)
    zero = _toy_model([0.0, 0.0])
    np.testing.assert_array_equal(np.exp(zero.risk_score(np.ones((3, 2)))), [1, 1, 1])
    x = np.array([[0.7]])
    S = m.survival_matrix(x, [0.5, 1.0, 3.0, 10.0])[0]
    np.testing.assert_allclose(S, np.exp(-np.array([0.0, 0.1, 0.3, 0.9]) * np.exp(0.7 * np.log(2))), atol=1e-15)
    with pytest.raises(DimensionError):
        m.predict_curve(np.ones(3))


def test_order_invariance_and_affine_rescaling():
    X, time, event = simulate_weibull_ph(300, [0.8, -0.5], seed=9)
    a = fit_cox_arrays(X, time, event, ["a", "b"])
    perm = np.random.default_rng(0).permutation(300)
    b = fit_cox_arrays(X[perm], time[perm], event[perm], ["a", "b"])
    np.testing.assert_allclose(a.beta, b.beta, atol=1e-10)
    X2 = X.copy()
    X2[:, 0] = 3.0 * X2[:, 0] + 7.0
    c = fit_cox_arrays(X2, time, event, ["a", "b"])
    assert c.beta[0] == pytest.approx(a.beta[0] / 3.0, rel=1e-6)  # both stop at the Newton tolerance
    np.testing.assert_array_equal(np.argsort(a.linear_predictor(X)), np.argsort(c.linear_predictor(X2)))


def test_serialization_round_trip():
    X, time, event = simulate_weibull_ph(200, [0.5], seed=2)
    m = fit_cox_arrays(X, time, event, ["a"])
    again = model_from_dict(m.to_dict())
    np.testing.assert_array_equal(again.survival_matrix(X[:5], [0.5, 1.0]), m.survival_matrix(X[:5], [0.5, 1.0]))
    assert again.hyperparameters == m.hyperparameters


def test_options_are_recorded():
    X, time, event = simulate_weibull_ph(100, [0.5], seed=2)
    m = fit_cox_arrays(X, time, event, ["a"], CoxOptions(max_iter=3))
    assert m.hyperparameters["max_iter"] == 3
    assert m.diagnostics["iterations"] <= 3


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_predicted_curves_valid(seed):
    X, time, event = simulate_weibull_ph(60, [0.4, -0.4], seed=seed)
    m = fit_cox_arrays(X, time, event, ["a", "b"])
    for x in X[:5]:
        c = m.predict_curve(x)
        assert np.all(np.diff(c.probs) <= 0) and np.all((c.probs >= 0) & (c.probs <= 1))
