import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import best_constant_pinball, finite_diff_grad, gp_posterior, walk_tree
from vmincqr.errors import DimensionMismatch, InvalidObjective, NonConvergence
from vmincqr.regressors import (
    MSE,
    ModelKind,
    Pinball,
    RegressorModel,
    condition_gp,
    empirical_quantile,
    fit_gbt,
    fit_gp,
    fit_mlp,
    fit_ols,
    fit_quantile_linear,
    gp_predict,
    iter_trees,
    log_marginal_likelihood,
    pinball_grad,
    pinball_loss,
    predict,
)
from vmincqr.regressors.mlp import init_params, loss_and_grad, n_params


def _roundtrip(model):
    return RegressorModel.from_dict(json.loads(json.dumps(model.to_dict())))


# -- pinball ---------------------------------------------------------------

def test_pinball_value():
    assert pinball_loss(3.0, 1.0, 0.5) == 1.0
    assert pinball_loss(1.0, 3.0, 0.9) == pytest.approx(0.2)
    assert pinball_loss(2.0, 2.0, 0.3) == 0.0


@settings(max_examples=200, deadline=None)
@given(y=st.floats(-100, 100), yhat=st.floats(-100, 100), q=st.floats(0.01, 0.99))
def test_pinball_nonnegative_zero_iff_equal(y, yhat, q):
    v = pinball_loss(y, yhat, q)
    assert v >= 0
    assert (v == 0) == (y == yhat)


@settings(max_examples=100, deadline=None)
@given(y=st.floats(-10, 10), yhat=st.floats(-10, 10), q=st.floats(0.01, 0.99))
def test_pinball_grad_matches_finite_difference(y, yhat, q):
    if abs(y - yhat) < 1e-3:
        return
    h = 1e-6
    fd = (pinball_loss(y, yhat + h, q) - pinball_loss(y, yhat - h, q)) / (2 * h)
    g = float(pinball_grad(y, yhat, q))
    assert abs(fd - g) <= 1e-4 * max(1.0, abs(g))


@settings(max_examples=50, deadline=None)
@given(ys=st.lists(st.floats(-50, 50), min_size=1, max_size=25),
       q1=st.floats(0.05, 0.95), q2=st.floats(0.05, 0.95))
def test_pinball_optimal_constant_monotone_in_q(ys, q1, q2):
    q1, q2 = sorted((q1, q2))
    c1 = best_constant_pinball(ys, q1)
    c2 = best_constant_pinball(ys, q2)
    assert c2 >= c1
    # the inverted-cdf quantile is itself a minimiser
    for q, c in ((q1, c1), (q2, c2)):
        e = empirical_quantile(ys, q)
        assert np.sum(pinball_loss(ys, e, q)) <= np.sum(pinball_loss(ys, c, q)) + 1e-9


def test_objective_validation():
    with pytest.raises(InvalidObjective):
        Pinball(1.0)
    with pytest.raises(InvalidObjective):
        Pinball(0.0)


# -- OLS -------------------------------------------------------------------

def test_ols_exact_line():
    m = fit_ols([[1], [2], [3]], [2, 4, 6])
    assert m.params["coef"][0] == pytest.approx(2, abs=1e-10)
    assert m.params["intercept"] == pytest.approx(0, abs=1e-10)
    assert predict(m, [[10]])[0] == pytest.approx(20)


def test_ols_constant_column_minimum_norm():
    m = fit_ols([[3.0], [3.0]], [5.0, 5.0])
    assert m.params["intercept"] == pytest.approx(5.0)
    np.testing.assert_allclose(predict(m, [[3.0], [7.0]]), [5.0, 5.0])


def test_ols_recovers_beta(rng):
    X = rng.standard_normal((50, 5))
    beta = np.array([1.5, -2.0, 0.0, 3.25, 0.5])
    m = fit_ols(X, X @ beta + 7.0)
    np.testing.assert_allclose(m.params["coef"], beta, atol=1e-8)
    assert m.params["intercept"] == pytest.approx(7.0, abs=1e-8)


def test_dimension_checks(rng):
    m = fit_ols(rng.standard_normal((10, 3)), rng.standard_normal(10))
    with pytest.raises(DimensionMismatch):
        predict(m, np.zeros((2, 4)))
    with pytest.raises(DimensionMismatch):
        fit_ols(np.zeros((3, 2)), np.zeros(4))
    assert predict(m, np.zeros((0, 3))).shape == (0,)


# -- quantile linear ---------------------------------------------------------

def test_quantile_linear_median_and_p90():
    y = np.arange(1.0, 101.0)
    X = np.zeros((100, 0))
    med = predict(fit_quantile_linear(X, y, 0.5), X[:1])[0]
    assert 50.0 - 1.0 <= med <= 51.0 + 1.0  # within one inter-sample gap of the median
    p90 = predict(fit_quantile_linear(X, y, 0.9), X[:1])[0]
    oracle = np.sort(y)[int(np.ceil(0.9 * 100)) - 1]  # sort-based empirical quantile
    assert abs(p90 - oracle) <= 1.0


def test_quantile_linear_near_lp_optimum(rng):
    from scipy.optimize import linprog
    n, d, q = 80, 3, 0.9
    X = rng.standard_normal((n, d))
    y = X @ [1.0, -1.0, 0.5] + rng.standard_normal(n) * (1 + np.abs(X[:, 0]))
    m = fit_quantile_linear(X, y, q)
    ours = pinball_loss(y, predict(m, X), q).mean()
    X1 = np.column_stack([X, np.ones(n)])
    c = np.concatenate([np.zeros(d + 1), q * np.ones(n), (1 - q) * np.ones(n)]) / n
    res = linprog(c, A_eq=np.hstack([X1, np.eye(n), -np.eye(n)]), b_eq=y,
                  bounds=[(None, None)] * (d + 1) + [(0, None)] * (2 * n), method="highs")
    assert ours <= res.fun * (1 + 1e-3)
    assert m.meta.n_iter <= 10_000


def test_quantile_linear_nonconvergence_reports_delta(rng):
    X = rng.standard_normal((40, 3))
    y = rng.standard_normal(40)
    with pytest.raises(NonConvergence) as ei:
        fit_quantile_linear(X, y, 0.9, max_iter=150)
    assert ei.value.loss_delta is not None
    m = fit_quantile_linear(X, y, 0.9, max_iter=150, strict=False)
    assert m.meta.n_iter == 150


def test_quantile_linear_q_ordering(rng):
    X = rng.standard_normal((60, 2))
    y = X[:, 0] + rng.standard_normal(60)
    lo = fit_quantile_linear(X, y, 0.1)
    hi = fit_quantile_linear(X, y, 0.9)
    assert np.mean(predict(lo, X) <= predict(hi, X)) > 0.9


# -- GP ----------------------------------------------------------------------

def test_gp_rejects_pinball():
    with pytest.raises(InvalidObjective):
        RegressorModel(kind=ModelKind.GAUSSIAN_PROCESS, objective=Pinball(0.5), params={}, hyperparams={}, meta=None)


def test_gp_interpolates_without_noise():
    X = np.linspace(-3, 3, 9)[:, None]
    y = np.sin(X[:, 0]) * 10
    fit = fit_gp(X, y, noise_variance=0.0)
    mean, _ = gp_predict(fit, X, include_noise=False)
    np.testing.assert_allclose(mean, y, atol=1e-6)


def test_gp_prior_reversion(rng):
    X = rng.uniform(-1, 1, (10, 2))
    y = rng.standard_normal(10) + 4.0
    fit = condition_gp(X, y, 0.5, 2.0, 0.1)
    mean, var = gp_predict(fit, np.array([[1e3, 1e3]]), include_noise=False)
    assert mean[0] == pytest.approx(np.mean(y), rel=1e-2)
    assert var[0] == pytest.approx(2.0, rel=1e-2)


def test_gp_matches_dense_oracle(rng):
    X = rng.standard_normal((15, 2))
    y = rng.standard_normal(15)
    Xq = rng.standard_normal((7, 2))
    fit = condition_gp(X, y, 0.8, 1.7, 0.05)
    mean, var = gp_predict(fit, Xq, include_noise=False)
    # the fitted model carries a fixed 1e-8 diagonal jitter on top of the noise
    m_ref, v_ref = gp_posterior(X, y, Xq, 0.8, 1.7, 0.05 + 1e-8, np.mean(y))
    np.testing.assert_allclose(mean, m_ref, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(var, v_ref, rtol=1e-6, atol=1e-9)
    _, vn = gp_predict(fit, Xq, include_noise=True)
    np.testing.assert_allclose(vn, var + 0.05)


def test_gp_empty_query_and_single_point():
    fit = condition_gp(np.array([[0.5]]), np.array([3.0]), 1.0, 1.0, 0.0)
    m, v = gp_predict(fit, np.zeros((0, 1)))
    assert m.shape == (0,) and v.shape == (0,)
    m, v = gp_predict(fit, np.array([[0.5]]), include_noise=False)
    assert m[0] == pytest.approx(3.0)
    assert v[0] == pytest.approx(0.0, abs=1e-7)
    assert v[0] >= 0.0


def test_gp_midpoint_variance():
    X = np.array([[0.0], [2.0]])
    fit = condition_gp(X, np.array([1.0, 1.0]), 1.0, 1.0, 1e-4)
    _, v = gp_predict(fit, np.array([[0.0], [1.0], [2.0]]), include_noise=False)
    assert v[1] > v[0] and v[1] > v[2]


@pytest.mark.parametrize("extra", [-0.7, 0.3, 2.5])
def test_gp_extra_point_never_increases_variance(extra):
    X = np.array([[-1.0], [0.0], [1.5]])
    y = np.array([0.2, -0.1, 0.4])
    q = np.linspace(-3, 3, 41)[:, None]
    _, v1 = gp_predict(condition_gp(X, y, 0.9, 1.3, 0.01), q, include_noise=False)
    X2 = np.vstack([X, [[extra]]])
    _, v2 = gp_predict(condition_gp(X2, np.append(y, 0.0), 0.9, 1.3, 0.01), q, include_noise=False)
    assert np.all(v2 <= v1 + 1e-12)


def test_gp_optimum_beats_random_draws():
    rng = np.random.default_rng(5)
    X = np.linspace(0, 6, 30)[:, None]
    y = np.sin(X[:, 0]) + 0.1 * rng.standard_normal(30)
    fit = fit_gp(X, y, seed=1)
    best = fit.log_marginal_likelihood
    for _ in range(10):
        ell, s2, n2 = np.exp(rng.uniform(-3, 3, 3))
        assert best >= log_marginal_likelihood(X, y, ell, s2, n2)


def test_gp_model_roundtrip(rng):
    X = rng.standard_normal((10, 2))
    y = rng.standard_normal(10)
    model = fit_gp(X, y, n_restarts=2, n_steps=20).to_model()
    back = _roundtrip(model)
    Xq = rng.standard_normal((4, 2))
    np.testing.assert_array_equal(gp_predict(model, Xq)[1], gp_predict(back, Xq)[1])
    np.testing.assert_array_equal(predict(model, Xq), predict(back, Xq))


# -- GBT ---------------------------------------------------------------------

def test_gbt_zero_trees_base_score(rng):
    X = rng.standard_normal((30, 3))
    y = rng.standard_normal(30) * 5
    m = fit_gbt(X, y, MSE, n_trees=0)
    np.testing.assert_allclose(predict(m, X), np.mean(y))
    m = fit_gbt(X, y, Pinball(0.9), n_trees=0)
    np.testing.assert_allclose(predict(m, X), np.quantile(y, 0.9, method="inverted_cdf"))


def test_gbt_piecewise_constant_fit():
    rng = np.random.default_rng(2)
    X = rng.uniform(0, 1, (120, 2))
    y = np.where(X[:, 0] < 0.3, 1.0, np.where(X[:, 1] < 0.6, 5.0, -2.0))
    m = fit_gbt(X, y, MSE, n_trees=200)
    rmse = np.sqrt(np.mean((predict(m, X) - y) ** 2))
    assert rmse < 0.05 * (y.max() - y.min())


def test_gbt_prediction_equals_tree_walk(rng):
    X = rng.standard_normal((50, 4))
    y = X[:, 0] ** 2 + X[:, 1]
    m = fit_gbt(X, y, Pinball(0.7), n_trees=15, max_depth=3)
    Xq = rng.standard_normal((9, 4))
    lr = m.hyperparams["learning_rate"]
    ref = np.array([
        m.params["base_score"] + lr * sum(
            walk_tree(x, t["feature"], t["threshold"], t["left"], t["right"], t["value"], t["root"])
            for t in iter_trees(m))
        for x in Xq])
    np.testing.assert_allclose(predict(m, Xq), ref, rtol=1e-12)


def test_gbt_tie_breaks_toward_lower_feature():
    X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    m = fit_gbt(X, y, MSE, n_trees=1, max_depth=1)
    assert m.params["feature"][m.params["roots"][0]] == 0


def test_gbt_deterministic_and_roundtrip(rng):
    X = rng.standard_normal((40, 5))
    y = X[:, 2] + 0.1 * rng.standard_normal(40)
    a = fit_gbt(X, y, MSE, n_trees=10, seed=4)
    b = fit_gbt(X, y, MSE, n_trees=10, seed=4)
    np.testing.assert_array_equal(predict(a, X), predict(b, X))
    np.testing.assert_array_equal(predict(_roundtrip(a), X), predict(a, X))


# -- MLP ---------------------------------------------------------------------

def test_mlp_linear_target():
    rng = np.random.default_rng(0)
    x = rng.uniform(-3, 3, (100, 1))
    xt = rng.uniform(-3, 3, (50, 1))
    m = fit_mlp(x, 2 * x[:, 0], MSE, seed=1)
    rmse = np.sqrt(np.mean((predict(m, xt) - 2 * xt[:, 0]) ** 2))
    assert rmse < 0.05 * np.std(2 * xt[:, 0])


def test_mlp_median_tracks_conditional_median():
    rng = np.random.default_rng(3)
    x = rng.uniform(-2, 2, (200, 1))
    sigma = 0.5
    y = 3 * x[:, 0] + sigma * rng.standard_normal(200)
    m = fit_mlp(x, y, Pinball(0.5), seed=2)
    xt = rng.uniform(-2, 2, (400, 1))
    yt = 3 * xt[:, 0] + sigma * rng.standard_normal(400)
    assert abs(np.mean(yt - predict(m, xt))) <= 0.05 * sigma * 2  # generator sd of y | x is sigma
    assert abs(np.mean(predict(m, xt) - 3 * xt[:, 0])) <= 0.05 * np.std(y)


def test_mlp_seed_determinism(rng):
    X = rng.standard_normal((30, 3))
    y = X[:, 0] - X[:, 1]
    a = fit_mlp(X, y, MSE, epochs=200, seed=7)
    b = fit_mlp(X, y, MSE, epochs=200, seed=7)
    np.testing.assert_array_equal(a.params["theta"], b.params["theta"])
    c = fit_mlp(X, y, MSE, epochs=200, seed=8)
    assert not np.array_equal(a.params["theta"], c.params["theta"])
    np.testing.assert_array_equal(predict(_roundtrip(a), X), predict(a, X))


@pytest.mark.parametrize("objective", [MSE, Pinball(0.05), Pinball(0.5), Pinball(0.95)],
                         ids=["mse", "q05", "q50", "q95"])
def test_mlp_backprop_matches_finite_differences(objective):
    rng = np.random.default_rng(11)
    d, h = 6, 16  # 129 weights, so 100 distinct ones can be checked
    X = rng.standard_normal((5, d))
    t = rng.standard_normal(5)
    theta = init_params(d, h, rng) + 0.1 * rng.standard_normal(n_params(d, h))
    idx = rng.choice(theta.size, 100, replace=False)

    def f(th):
        return loss_and_grad(th, X, t, h, objective, 0.1)[0]

    _, g = loss_and_grad(theta, X, t, h, objective, 0.1)
    fd = finite_diff_grad(f, theta, idx, h=1e-6)
    if objective.is_pinball:
        from vmincqr.regressors.mlp import forward
        out = forward(theta, X, h)[0]
        assert np.all(np.abs(out - t) > 1e-6)
    z = X @ theta[:d * h].reshape(d, h) + theta[d * h:d * h + h]
    assert np.min(np.abs(z)) > 1e-5  # stay away from ReLU kinks
    rel = np.abs(g[idx] - fd) / np.maximum(np.abs(fd), 1e-3)
    assert rel.max() < 1e-4
