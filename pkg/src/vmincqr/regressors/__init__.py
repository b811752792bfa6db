"""Point and quantile regressors sharing one serialisable model container."""
from .base import (
    MSE,
    ModelKind,
    Objective,
    Pinball,
    RegressorModel,
    TrainMeta,
    empirical_quantile,
    pinball_grad,
    pinball_loss,
    predict,
)
from .gbt import GBTConfig, fit_gbt, iter_trees
from .gp import GPFit, condition_gp, fit_gp, gp_predict, log_marginal_likelihood
from .linear import fit_ols, fit_quantile_linear
from .mlp import MLPConfig, fit_mlp

__all__ = [
    "MSE", "ModelKind", "Objective", "Pinball", "RegressorModel", "TrainMeta",
    "empirical_quantile", "pinball_grad", "pinball_loss", "predict",
    "GBTConfig", "fit_gbt", "iter_trees",
    "GPFit", "condition_gp", "fit_gp", "gp_predict", "log_marginal_likelihood",
    "fit_ols", "fit_quantile_linear",
    "MLPConfig", "fit_mlp",
]
