"""One-hidden-layer ReLU network trained full-batch with Adam."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidConfig, NonFiniteLoss
from .base import (
    MSE,
    ModelKind,
    Objective,
    RegressorModel,
    TrainMeta,
    check_xy,
    empirical_quantile,
    pinball_grad,
    pinball_loss,
    register,
)


@dataclass(frozen=True)
class MLPConfig:
    hidden: int = 16
    epochs: int = 3000
    learning_rate: float = 0.01
    l2_weight: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1 or self.epochs < 0 or not self.learning_rate > 0 or self.l2_weight < 0:
            raise InvalidConfig(f"invalid MLP configuration {self}")


def _unpack(theta, d, h):
    i = d * h
    W1 = theta[:i].reshape(d, h)
    b1 = theta[i:i + h]
    w2 = theta[i + h:i + 2 * h]
    b2 = theta[i + 2 * h]
    return W1, b1, w2, b2


def n_params(d, h):
    return d * h + 2 * h + 1


def init_params(d, h, rng) -> np.ndarray:
    """Fan-in scaled uniform initialisation; output bias starts at 0."""
    a1 = 1.0 / np.sqrt(max(d, 1))
    a2 = 1.0 / np.sqrt(h)
    return np.concatenate([
        rng.uniform(-a1, a1, d * h),
        rng.uniform(-a1, a1, h),
        rng.uniform(-a2, a2, h),
        [0.0],
    ])


def forward(theta, X, h):
    W1, b1, w2, b2 = _unpack(theta, X.shape[1], h)
    z = X @ W1 + b1
    a = np.maximum(z, 0.0)
    return a @ w2 + b2, z, a


def loss_and_grad(theta, X, t, h, objective: Objective, l2_weight: float):
    """Mean objective plus 0.5 * l2_weight * ||weights||^2 (biases unpenalised).

    ``t`` is the target in the network's output units.  Returns
    ``(loss, gradient)`` with the gradient laid out like ``theta``.
    """
    n, d = X.shape
    W1, b1, w2, b2 = _unpack(theta, d, h)
    out, z, a = forward(theta, X, h)
    if objective.is_pinball:
        loss = np.mean(pinball_loss(t, out, objective.q))
        dout = pinball_grad(t, out, objective.q) / n
    else:
        r = out - t
        loss = np.mean(r * r)
        dout = 2.0 * r / n
    loss += 0.5 * l2_weight * (np.sum(W1 * W1) + np.sum(w2 * w2))

    gw2 = a.T @ dout + l2_weight * w2
    gb2 = np.sum(dout)
    dz = np.outer(dout, w2) * (z > 0.0)
    gW1 = X.T @ dz + l2_weight * W1
    gb1 = dz.sum(axis=0)
    return float(loss), np.concatenate([gW1.ravel(), gb1, gw2, [gb2]])


def fit_mlp(X, y, objective: Objective = MSE, config: MLPConfig | None = None, **overrides) -> RegressorModel:
    """Train a 1-hidden-layer network; bit-identical for a repeated seed.

    The target is shifted by its mean (MSE) or empirical q-quantile (pinball)
    so that the output bias starts near the answer; its scale is left alone.
    """
    config = config or MLPConfig(**overrides)
    X, y = check_xy(X, y, min_rows=2)
    n, d = X.shape
    h = config.hidden
    offset = empirical_quantile(y, objective.q) if objective.is_pinball else float(np.mean(y))
    t = y - offset

    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 0x6D6C70]))
    theta = init_params(d, h, rng)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, config.learning_rate
    loss = float("nan")
    for epoch in range(1, config.epochs + 1):
        loss, g = loss_and_grad(theta, X, t, h, objective, config.l2_weight)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"MLP loss became non-finite at epoch {epoch}; lower the learning rate")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1**epoch)) / (np.sqrt(v / (1 - b2**epoch)) + eps)
    final, _ = loss_and_grad(theta, X, t, h, objective, config.l2_weight)
    if not np.isfinite(final):
        raise NonFiniteLoss("MLP loss is non-finite after training")

    return RegressorModel(
        kind=ModelKind.MLP,
        objective=objective,
        params={"theta": theta, "offset": offset},
        hyperparams={"hidden": h, "epochs": config.epochs, "learning_rate": lr,
                     "l2_weight": config.l2_weight, "seed": config.seed},
        meta=TrainMeta(n_train=n, d_features=d, seed=config.seed, final_train_loss=float(final),
                       n_iter=config.epochs),
    )


@register(ModelKind.MLP)
def _predict_mlp(model, X):
    out, _, _ = forward(np.asarray(model.params["theta"], float), X, int(model.hyperparams["hidden"]))
    return out + float(model.params["offset"])
