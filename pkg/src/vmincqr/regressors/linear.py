"""Least squares and linear quantile regression."""
from __future__ import annotations

import logging

import numpy as np

from .. import kernels
from ..errors import NonConvergence
from .base import (
    MSE,
    ModelKind,
    Pinball,
    RegressorModel,
    TrainMeta,
    check_xy,
    empirical_quantile,
    register,
)

log = logging.getLogger(__name__)


def _lstsq_centered(X, y):
    xm = X.mean(axis=0)
    ym = y.mean()
    coef = np.linalg.lstsq(X - xm, y - ym, rcond=None)[0] if X.shape[1] else np.zeros(0)
    return coef, float(ym - xm @ coef)


def fit_ols(X, y) -> RegressorModel:
    """Least squares with intercept.

    Fitting on centred data makes the minimum-norm solution put all of a
    constant column's effect into the intercept.
    """
    X, y = check_xy(X, y)
    coef, intercept = _lstsq_centered(X, y)
    resid = y - X @ coef - intercept
    return RegressorModel(
        kind=ModelKind.OLS,
        objective=MSE,
        params={"coef": coef, "intercept": intercept},
        meta=TrainMeta(n_train=len(y), d_features=X.shape[1], final_train_loss=float(np.mean(resid**2))),
    )


def fit_quantile_linear(X, y, q: float, *, max_iter: int = 10_000, window: int = 100,
                        tol: float = 1e-9, step0: float = 0.5, min_step: float = 1e-7,
                        strict: bool = True) -> RegressorModel:
    """Linear coefficients minimising mean pinball loss by subgradient descent.

    Runs in standardized units (features z-scored, target centred on its
    median and divided by its spread) so that ``tol`` and the step sizes are
    scale free.  Starts from least squares shifted to the empirical
    q-quantile of its residuals.  Raises :class:`NonConvergence` when
    ``max_iter`` is hit (a warning instead when ``strict`` is false).
    """
    objective = Pinball(q)
    X, y = check_xy(X, y)
    n, d = X.shape

    xm = X.mean(axis=0)
    xs = X.std(axis=0)
    live = xs > 1e-12 * np.maximum(1.0, np.abs(xm))
    Z = np.zeros_like(X)
    Z[:, live] = (X[:, live] - xm[live]) / xs[live]
    y0 = float(np.median(y))
    ys = float(np.std(y))
    if ys == 0.0:
        ys = 1.0
    t = (y - y0) / ys

    Z1 = np.ascontiguousarray(np.column_stack([Z, np.ones(n)]))
    coef0, b0 = _lstsq_centered(Z, t)
    b0 += empirical_quantile(t - Z @ coef0 - b0, q)
    w0 = np.append(coef0, b0)

    w, loss, n_iter, converged, delta = kernels.pinball_descent(
        Z1, np.ascontiguousarray(t), float(q), w0, float(step0), float(min_step),
        int(max_iter), int(window), float(tol))
    if not converged:
        msg = f"quantile-linear fit (q={q}) hit the {max_iter}-iteration cap"
        if strict:
            raise NonConvergence(msg, delta)
        log.warning("%s; final loss delta %.3e", msg, delta)

    coef = np.zeros(d)
    coef[live] = w[:d][live] * ys / xs[live]
    intercept = float(y0 + ys * w[d] - coef @ xm)
    return RegressorModel(
        kind=ModelKind.QUANTILE_LINEAR,
        objective=objective,
        params={"coef": coef, "intercept": intercept},
        hyperparams={"max_iter": max_iter, "window": window, "tol": tol, "step0": step0,
                     "min_step": min_step},
        meta=TrainMeta(n_train=n, d_features=d, final_train_loss=float(loss * ys), n_iter=int(n_iter)),
    )


@register(ModelKind.OLS)
@register(ModelKind.QUANTILE_LINEAR)
def _predict_linear(model, X):
    return X @ model.params["coef"] + float(model.params["intercept"])
