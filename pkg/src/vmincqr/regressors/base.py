"""Shared model container, objectives and serialization."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import DimensionMismatch, InvalidConfig, InvalidObjective, SchemaMismatch

FORMAT_VERSION = 1


class ModelKind(str, enum.Enum):
    OLS = "ols"
    QUANTILE_LINEAR = "quantile_linear"
    GAUSSIAN_PROCESS = "gp"
    GRADIENT_BOOSTED_TREES = "gbt"
    MLP = "mlp"


@dataclass(frozen=True)
class Objective:
    name: str = "mse"
    q: float | None = None

    def __post_init__(self):
        if self.name not in ("mse", "pinball"):
            raise InvalidObjective(f"unknown objective {self.name!r}")
        if self.name == "pinball":
            if self.q is None or not 0.0 < self.q < 1.0:
                raise InvalidObjective(f"pinball quantile must lie in (0, 1), got {self.q!r}")
        elif self.q is not None:
            raise InvalidObjective("mse objective takes no quantile")

    @property
    def is_pinball(self) -> bool:
        return self.name == "pinball"

    def loss(self, y, yhat) -> float:
        y, yhat = np.asarray(y, float), np.asarray(yhat, float)
        if self.is_pinball:
            return float(np.mean(pinball_loss(y, yhat, self.q)))
        return float(np.mean((y - yhat) ** 2))

    def to_dict(self):
        return {"name": self.name, "q": self.q}

    def __str__(self):
        return f"pinball({self.q:g})" if self.is_pinball else "mse"


MSE = Objective("mse")


def Pinball(q: float) -> Objective:
    return Objective("pinball", float(q))


def pinball_loss(y, yhat, q):
    """Elementwise max{q (y - yhat), (1 - q)(yhat - y)}."""
    r = np.asarray(y, float) - np.asarray(yhat, float)
    return np.maximum(q * r, (q - 1.0) * r)


def pinball_grad(y, yhat, q):
    """d/d(yhat) of the pinball loss; 0 is used at the kink y == yhat."""
    r = np.asarray(y, float) - np.asarray(yhat, float)
    return np.where(r > 0.0, -q, np.where(r < 0.0, 1.0 - q, 0.0))


def empirical_quantile(y, q: float) -> float:
    """Smallest order statistic with empirical CDF >= q (a pinball-loss minimiser)."""
    return float(np.quantile(np.asarray(y, float), q, method="inverted_cdf"))


@dataclass(frozen=True)
class TrainMeta:
    n_train: int
    d_features: int
    seed: int | None = None
    final_train_loss: float = float("nan")
    n_iter: int | None = None

    def to_dict(self):
        return {
            "n_train": self.n_train,
            "d_features": self.d_features,
            "seed": self.seed,
            "final_train_loss": self.final_train_loss,
            "n_iter": self.n_iter,
        }


_PREDICTORS: dict[ModelKind, Callable] = {}


def register(kind: ModelKind):
    def deco(fn):
        _PREDICTORS[kind] = fn
        return fn
    return deco


@dataclass(frozen=True, eq=False)
class RegressorModel:
    """A fitted point or quantile predictor.

    ``params`` holds numpy arrays (and plain scalars); ``hyperparams`` the
    configuration used to fit.  Instances are treated as immutable.
    """

    kind: ModelKind
    objective: Objective
    params: dict
    hyperparams: dict = field(default_factory=dict)
    meta: TrainMeta | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.kind is ModelKind.GAUSSIAN_PROCESS and self.objective.is_pinball:
            raise InvalidObjective("Gaussian processes give quantiles analytically; pinball objective rejected")

    @property
    def d_features(self) -> int:
        return self.meta.d_features

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind.value,
            "objective": self.objective.to_dict(),
            "hyperparameters": self.hyperparams,
            "parameters": {k: _encode(v) for k, v in self.params.items()},
            "train_meta": self.meta.to_dict() if self.meta else None,
        }

    @classmethod
    def from_dict(cls, doc) -> "RegressorModel":
        if doc.get("format_version") != FORMAT_VERSION:
            raise SchemaMismatch(f"unsupported model format_version {doc.get('format_version')!r}")
        obj = doc["objective"]
        meta = doc.get("train_meta")
        return cls(
            kind=ModelKind(doc["kind"]),
            objective=Objective(obj["name"], obj.get("q")),
            params={k: _decode(v) for k, v in doc["parameters"].items()},
            hyperparams=dict(doc.get("hyperparameters", {})),
            meta=TrainMeta(**meta) if meta else None,
        )


def _encode(v):
    if isinstance(v, np.ndarray):
        kind = "int" if np.issubdtype(v.dtype, np.integer) else "float"
        data = v.ravel().tolist()
        return {"dtype": kind, "shape": list(v.shape), "data": data}
    return v


def _decode(v):
    if isinstance(v, dict) and "shape" in v and "data" in v:
        dtype = np.int64 if v.get("dtype") == "int" else float
        return np.asarray(v["data"], dtype=dtype).reshape(v["shape"])
    return v


def as_matrix(X, d: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if d in (None, 1) else X.reshape(1, -1)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D feature matrix, got shape {X.shape}")
    if d is not None and X.shape[1] != d and X.shape[0] > 0:
        raise DimensionMismatch(f"model was fitted on {d} features, got {X.shape[1]}")
    if d is not None and X.shape[0] == 0:
        X = X.reshape(0, d)
    return X


def check_xy(X, y, min_rows: int = 1):
    X = as_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
    if X.shape[0] < min_rows:
        raise InvalidConfig(f"need at least {min_rows} rows, got {X.shape[0]}")
    return X, y


def predict(model: RegressorModel, X) -> np.ndarray:
    """One prediction per row of ``X``; pure function of (model, X)."""
    X = as_matrix(X, model.d_features)
    if X.shape[0] == 0:
        return np.zeros(0)
    return _PREDICTORS[model.kind](model, X)
