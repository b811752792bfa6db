"""Gaussian-process regression with an RBF kernel.

Hyperparameters (length scale, signal variance, noise variance) are fitted by
maximising the log marginal likelihood with Adam-style gradient ascent over
log-parameters from several starts.  The prior mean is the training-target
mean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky

from ..errors import InvalidConfig, SingularKernel
from .base import MSE, ModelKind, RegressorModel, TrainMeta, as_matrix, check_xy, register

JITTER = 1e-8
_LOG_BOUND = 12.0  # log-parameters kept within +-12 of their data-driven scale


def sq_dists(A, B) -> np.ndarray:
    aa = np.sum(A * A, axis=1)[:, None]
    bb = np.sum(B * B, axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * A @ B.T, 0.0)


def rbf(A, B, length_scale, signal_variance):
    return signal_variance * np.exp(-0.5 * sq_dists(A, B) / length_scale**2)


@dataclass(frozen=True, eq=False)
class GPFit:
    kernel_length_scale: float
    kernel_signal_variance: float
    noise_variance: float
    X_train: np.ndarray
    y_mean: float
    alpha: np.ndarray       # K^-1 (y - y_mean)
    chol: np.ndarray        # lower Cholesky factor of K
    log_marginal_likelihood: float = float("nan")

    @property
    def d_features(self) -> int:
        return self.X_train.shape[1]

    def to_model(self) -> RegressorModel:
        return RegressorModel(
            kind=ModelKind.GAUSSIAN_PROCESS,
            objective=MSE,
            params={
                "length_scale": self.kernel_length_scale,
                "signal_variance": self.kernel_signal_variance,
                "noise_variance": self.noise_variance,
                "y_mean": self.y_mean,
                "X_train": self.X_train,
                "alpha": self.alpha,
                "chol": self.chol,
                "log_marginal_likelihood": self.log_marginal_likelihood,
            },
            meta=TrainMeta(n_train=self.X_train.shape[0], d_features=self.d_features,
                           final_train_loss=-self.log_marginal_likelihood),
        )

    @classmethod
    def from_model(cls, model: RegressorModel) -> "GPFit":
        p = model.params
        return cls(float(p["length_scale"]), float(p["signal_variance"]), float(p["noise_variance"]),
                   np.asarray(p["X_train"], float), float(p["y_mean"]), np.asarray(p["alpha"], float),
                   np.asarray(p["chol"], float), float(p.get("log_marginal_likelihood", float("nan"))))


def _factor(K):
    try:
        return cholesky(K, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None


def _chol_with_floor(K, signal_variance):
    L = _factor(K)
    if L is None:
        floor = 1e-6 * max(signal_variance, 1e-12)
        L = _factor(K + floor * np.eye(K.shape[0]))
        if L is None:
            raise SingularKernel("kernel matrix not positive definite even after adding a noise floor")
    return L


def log_marginal_likelihood(X, y, length_scale, signal_variance, noise_variance) -> float:
    """log p(y | X, theta) for the RBF GP with the training-mean prior."""
    X, y = check_xy(X, y)
    r = y - y.mean()
    K = rbf(X, X, length_scale, signal_variance) + (noise_variance + JITTER) * np.eye(len(y))
    L = _chol_with_floor(K, signal_variance)
    a = cho_solve((L, True), r, check_finite=False)
    return float(-0.5 * r @ a - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * math.log(2 * math.pi))


def _lml_and_grad(D2, r, logp, free):
    """LML and its gradient w.r.t. (log l, log s2, log n2)."""
    ell, s2, n2 = np.exp(logp)
    n = len(r)
    R = np.exp(-0.5 * D2 / ell**2)
    Kf = s2 * R
    K = Kf + (n2 + JITTER) * np.eye(n)
    L = _factor(K)
    if L is None:
        return -np.inf, np.zeros(3)
    a = cho_solve((L, True), r, check_finite=False)
    lml = -0.5 * r @ a - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi)
    Kinv = cho_solve((L, True), np.eye(n), check_finite=False)
    W = np.outer(a, a) - Kinv
    grad = np.array([
        0.5 * np.sum(W * (Kf * D2 / ell**2)),
        0.5 * np.sum(W * Kf),
        0.5 * n2 * np.trace(W),
    ])
    return float(lml), grad * free


def fit_gp(X, y, *, length_scale: float | None = None, signal_variance: float | None = None,
           noise_variance: float | None = None, n_restarts: int = 5, n_steps: int = 200,
           learning_rate: float = 0.1, seed: int = 0) -> GPFit:
    """Fit an RBF GP.  Any hyperparameter passed explicitly is held fixed.

    The first start uses data-driven defaults (median pairwise distance,
    target variance, a tenth of it for noise); the others perturb those in
    log space with the seeded generator.  The best log marginal likelihood
    over all starts and steps is kept.
    """
    X, y = check_xy(X, y, min_rows=2)
    n = len(y)
    ym = float(y.mean())
    r = y - ym
    D2 = sq_dists(X, X)
    off = D2[np.triu_indices(n, 1)]
    med = float(np.sqrt(np.median(off))) if off.size and np.median(off) > 0 else 1.0
    vy = float(np.var(y)) if np.var(y) > 0 else 1.0

    center = np.log([med, vy, 0.1 * vy])
    fixed = [length_scale, signal_variance, noise_variance]
    for name, v in zip(("length_scale", "signal_variance"), fixed[:2]):
        if v is not None and not v > 0:
            raise InvalidConfig(f"{name} must be positive, got {v}")
    if noise_variance is not None and noise_variance < 0:
        raise InvalidConfig(f"noise_variance must be non-negative, got {noise_variance}")
    free = np.array([v is None for v in fixed], dtype=float)
    fixed_log = np.array([math.log(v) if v else -np.inf for v in
                          (length_scale, signal_variance, noise_variance)])

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6770]))
    best_lml, best_p = -np.inf, None

    def compose(p):
        return np.where(free > 0, p, fixed_log)

    if not free.any():
        n_restarts, n_steps = 1, 0
    for start in range(max(1, n_restarts)):
        p = center.copy() if start == 0 else center + rng.normal(size=3)
        m = np.zeros(3)
        v = np.zeros(3)
        for step in range(n_steps + 1):
            full = compose(p)
            lml, g = _lml_and_grad(D2, r, full, free)
            if lml > best_lml:
                best_lml, best_p = lml, full.copy()
            if step == n_steps or not np.isfinite(lml):
                break
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mh = m / (1 - 0.9 ** (step + 1))
            vh = v / (1 - 0.999 ** (step + 1))
            p = p + learning_rate * mh / (np.sqrt(vh) + 1e-8)
            p = np.clip(p, center - _LOG_BOUND, center + _LOG_BOUND)

    if best_p is None:
        best_p = compose(center)
    ell, s2, n2 = (float(x) for x in np.exp(best_p))
    return condition_gp(X, y, ell, s2, n2)


def condition_gp(X, y, length_scale, signal_variance, noise_variance) -> GPFit:
    """Posterior state for fixed hyperparameters (no optimisation)."""
    X, y = check_xy(X, y)
    ell, s2, n2 = float(length_scale), float(signal_variance), float(noise_variance)
    ym = float(y.mean())
    K = rbf(X, X, ell, s2) + (n2 + JITTER) * np.eye(len(y))
    L = _chol_with_floor(K, s2)
    a = cho_solve((L, True), y - ym, check_finite=False)
    lml = float(-0.5 * (y - ym) @ a - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * math.log(2 * math.pi))
    return GPFit(ell, s2, n2, X.copy(), ym, a, L, lml)


def gp_predict(model, X, include_noise: bool = True):
    """Posterior mean and variance per row (variance clamped at 0).

    With ``include_noise`` the observation-noise variance is added, giving the
    predictive variance of a new label rather than of the latent function.
    """
    fit = model if isinstance(model, GPFit) else GPFit.from_model(model)
    X = as_matrix(X, fit.d_features)
    if X.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    Ks = rbf(X, fit.X_train, fit.kernel_length_scale, fit.kernel_signal_variance)
    mean = fit.y_mean + Ks @ fit.alpha
    v = cho_solve((fit.chol, True), Ks.T, check_finite=False)
    var = fit.kernel_signal_variance - np.sum(Ks * v.T, axis=1)
    var = np.maximum(var, 0.0)
    if include_noise:
        var = var + fit.noise_variance
    return mean, var


@register(ModelKind.GAUSSIAN_PROCESS)
def _predict_gp(model, X):
    return gp_predict(model, X)[0]
