"""Gradient-boosted regression trees under MSE or pinball loss.

Each stage grows a depth-limited tree on the negative gradient of the
objective (variance-reduction splits).  Leaf values are then re-estimated by
a line search on the actual loss: the residual mean for MSE and the residual
empirical q-quantile for pinball.  Without that step a pinball stage could move
predictions by at most ``learning_rate`` per tree, which is useless for
targets in millivolts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import InvalidConfig
from .base import (
    MSE,
    ModelKind,
    Objective,
    RegressorModel,
    TrainMeta,
    check_xy,
    empirical_quantile,
    pinball_grad,
    register,
)


@dataclass(frozen=True)
class GBTConfig:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise InvalidConfig(f"invalid tree configuration {self}")
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning_rate must be positive, got {self.learning_rate}")


class _Builder:
    """Grows one tree at a time into shared flat node arrays."""

    def __init__(self, X, min_leaf, max_depth):
        self.X = X
        self.order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable"))
        self.xs = np.ascontiguousarray(np.take_along_axis(X, self.order, axis=0))
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def _new(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def grow(self, g, leaf_value):
        """Grow a tree on gradient targets ``g``; ``leaf_value(rows)`` sets leaves.

        Returns the root index and the (training rows, value) of every leaf.
        """
        root = self._new()
        leaves = []
        n = self.X.shape[0]
        stack = [(root, np.ones(n, dtype=bool), 0)]
        while stack:
            node, mask, depth = stack.pop()
            n_node = int(mask.sum())
            split = None
            if depth < self.max_depth and n_node >= 2 * self.min_leaf:
                gn = g[mask]
                s_tot = float(np.sum(gn))
                ss = float(np.sum((gn - s_tot / n_node) ** 2))
                if ss > 0.0:
                    j, i, gain = kernels.best_split(self.xs, self.order, g, mask, s_tot, n_node, self.min_leaf)
                    if j >= 0 and gain > 1e-12 * ss:
                        split = (j, i)
            if split is None:
                rows = np.flatnonzero(mask)
                self.value[node] = float(leaf_value(rows))
                leaves.append((rows, self.value[node]))
                continue
            j, i = split
            col = self.X[:, j]
            cut = self.xs[i, j]
            vals = col[mask]
            lo = vals[vals <= cut].max()
            hi = vals[vals > cut].min()
            thr = 0.5 * (lo + hi)
            if not lo <= thr < hi:  # midpoint rounding between adjacent floats
                thr = lo
            go_left = mask & (col <= thr)
            go_right = mask & ~go_left
            li, ri = self._new(), self._new()
            self.feature[node], self.threshold[node] = j, thr
            self.left[node], self.right[node] = li, ri
            stack.append((ri, go_right, depth + 1))
            stack.append((li, go_left, depth + 1))
        return root, leaves

    def arrays(self):
        return (np.asarray(self.feature, dtype=np.int64), np.asarray(self.threshold, dtype=float),
                np.asarray(self.left, dtype=np.int64), np.asarray(self.right, dtype=np.int64),
                np.asarray(self.value, dtype=float))


def fit_gbt(X, y, objective: Objective = MSE, config: GBTConfig | None = None, **overrides) -> RegressorModel:
    """Boost ``config.n_trees`` trees of depth ``config.max_depth``.

    The base score is mean(y) for MSE and the empirical q-quantile for pinball.
    """
    config = config or GBTConfig(**overrides)
    X, y = check_xy(X, y, min_rows=2)
    X = np.ascontiguousarray(X)
    n, d = X.shape
    q = objective.q
    base = empirical_quantile(y, q) if objective.is_pinball else float(np.mean(y))
    F = np.full(n, base)

    b = _Builder(X, config.min_samples_leaf, config.max_depth)
    roots = []
    for _ in range(config.n_trees):
        resid = y - F
        if objective.is_pinball:
            g = -pinball_grad(y, F, q)
            leaf = lambda rows: empirical_quantile(resid[rows], q)  # noqa: E731
        else:
            g = resid
            leaf = lambda rows: float(np.mean(resid[rows]))  # noqa: E731
        root, leaves = b.grow(g, leaf)
        roots.append(root)
        step = np.zeros(n)
        for rows, v in leaves:
            step[rows] = v
        F = F + config.learning_rate * step

    feature, threshold, left, right, value = b.arrays()
    return RegressorModel(
        kind=ModelKind.GRADIENT_BOOSTED_TREES,
        objective=objective,
        params={
            "base_score": base,
            "feature": feature,
            "threshold": threshold,
            "left": left,
            "right": right,
            "value": value,
            "roots": np.asarray(roots, dtype=np.int64),
        },
        hyperparams={"n_trees": config.n_trees, "max_depth": config.max_depth,
                     "learning_rate": config.learning_rate, "min_samples_leaf": config.min_samples_leaf,
                     "seed": config.seed},
        meta=TrainMeta(n_train=n, d_features=d, seed=config.seed, final_train_loss=objective.loss(y, F)),
    )


def iter_trees(model: RegressorModel):
    """Yield each tree as a dict of node arrays rooted at index ``root``."""
    p = model.params
    for root in p["roots"]:
        yield {"root": int(root), "feature": p["feature"], "threshold": p["threshold"],
               "left": p["left"], "right": p["right"], "value": p["value"]}


@register(ModelKind.GRADIENT_BOOSTED_TREES)
def _predict_gbt(model, X):
    p = model.params
    hp = model.hyperparams
    total = kernels.apply_trees(np.ascontiguousarray(X), p["feature"], p["threshold"], p["left"],
                                p["right"], p["value"], np.asarray(p["roots"], dtype=np.int64),
                                int(hp["max_depth"]))
    return float(p["base_score"]) + hp["learning_rate"] * total
