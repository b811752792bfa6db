"""Named interval methods: feature handling, model fitting, calibration, prediction.

A method name is ``<family>-<base>`` with family in ``qr``, ``cqr``, ``cp``
and base in ``linear``, ``gbt``, ``mlp``, or the bare name ``gp``.  Linear,
GP and MLP bases see CFS-selected features; boosted trees see every column.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import conformal
from .conformal import CalibrationResult, IntervalSet
from .dataset import Standardizer
from .errors import InvalidConfig, SchemaMismatch
from .feature_select import cfs_select
from .regressors import (
    MSE,
    Pinball,
    RegressorModel,
    fit_gbt,
    fit_gp,
    fit_mlp,
    fit_ols,
    fit_quantile_linear,
    gp_predict,
    pinball_loss,
    predict,
)
from .regressors.gbt import GBTConfig
from .regressors.mlp import MLPConfig

FORMAT_VERSION = 1
FAMILIES = ("qr", "cqr", "cp")
BASES = ("linear", "gbt", "mlp")
BASE_LABELS = {"linear": "Linear Regression", "gbt": "Gradient Boosting", "mlp": "Neural Network"}


def all_methods():
    return ["gp"] + [f"{f}-{b}" for f in FAMILIES for b in BASES]


def parse_method(name: str):
    """Return (family, base); ``gp`` maps to ("gp", "gp")."""
    name = name.strip().lower()
    if name == "gp":
        return "gp", "gp"
    fam, _, base = name.partition("-")
    if fam not in FAMILIES or base not in BASES:
        raise InvalidConfig(f"unknown method {name!r}; choose from {', '.join(all_methods())}")
    return fam, base


def method_label(name: str) -> str:
    fam, base = parse_method(name)
    if fam == "gp":
        return "GP"
    return f"{fam.upper()} {BASE_LABELS[base]}"


def model_group(name: str):
    """Methods in the same group share fitted models: qr-X and cqr-X share a quantile pair."""
    fam, base = parse_method(name)
    if fam == "gp":
        return ("gp", "gp")
    return ("point" if fam == "cp" else "quantile", base)


def derive_seed(master: int, *key) -> int:
    """Stable 63-bit seed from a master seed and a cell key (independent of PYTHONHASHSEED)."""
    tag = zlib.crc32("|".join(str(k) for k in key).encode())
    return int(np.random.SeedSequence([int(master), tag]).generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass
class FitOptions:
    k_max: int = 10
    cfs_method: str = "merit"
    gbt: GBTConfig = field(default_factory=GBTConfig)
    mlp: MLPConfig = field(default_factory=MLPConfig)
    gp_restarts: int = 5
    gp_steps: int = 200
    #: share of the training rows held out to choose k when no selection rows are given
    select_holdout: float = 0.25


@dataclass(eq=False)
class FittedMethod:
    """Everything needed to turn raw feature rows into intervals for one target."""

    method: str
    alpha: float
    feature_names: list
    standardizer: Standardizer
    selected: np.ndarray
    models: dict
    calibration: CalibrationResult | None = None
    target: tuple | None = None
    feature_set: str = "both"
    k_scores: dict = field(default_factory=dict)

    @property
    def family(self):
        return parse_method(self.method)[0]

    @property
    def needs_calibration(self) -> bool:
        return self.family in ("cp", "cqr")

    def transform(self, X) -> np.ndarray:
        Z = self.standardizer.transform(X)
        return Z[:, self.selected]

    def point(self, X):
        fam = self.family
        Z = self.transform(X)
        if fam == "gp":
            return predict(self.models["gp"], Z)
        if fam == "cp":
            return predict(self.models["point"], Z)
        return None

    def calibrate(self, X_cal, y_cal) -> CalibrationResult:
        Z = self.transform(X_cal)
        if self.family == "cp":
            cal = conformal.cp_calibrate(self.models["point"], Z, y_cal, self.alpha)
        elif self.family == "cqr":
            cal = conformal.cqr_calibrate(self.models["lo"], self.models["hi"], Z, y_cal, self.alpha)
        else:
            raise InvalidConfig(f"method {self.method} does not use conformal calibration")
        self.calibration = cal
        return cal

    def intervals(self, X, calibration: CalibrationResult | None = None) -> IntervalSet:
        fam = self.family
        Z = self.transform(X)
        cal = calibration or self.calibration
        if fam == "gp":
            mean, var = gp_predict(self.models["gp"], Z)
            return conformal.gp_interval(mean, var, self.alpha)
        if fam == "qr":
            return conformal.qr_interval(self.models["lo"], self.models["hi"], Z, self.alpha)
        if cal is None:
            raise InvalidConfig(f"method {self.method} needs a calibration result")
        if fam == "cp":
            return conformal.cp_interval(self.models["point"], Z, cal)
        return conformal.cqr_interval(self.models["lo"], self.models["hi"], Z, cal)

    def as_method(self, name: str) -> "FittedMethod":
        """Same fitted models under another method of the same group (qr-X <-> cqr-X)."""
        if model_group(name) != model_group(self.method):
            raise InvalidConfig(f"{name} cannot reuse models fitted for {self.method}")
        return replace(self, method=name, calibration=None)

    def align(self, column_names) -> list:
        """Column positions of the trained-on features inside ``column_names``."""
        pos = {c: i for i, c in enumerate(column_names)}
        missing = [c for c in self.feature_names if c not in pos]
        if missing:
            raise SchemaMismatch(f"input is missing trained-on column {missing[0]!r}"
                                 + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
        return [pos[c] for c in self.feature_names]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "method": self.method,
            "alpha": self.alpha,
            "target": list(self.target) if self.target else None,
            "feature_set": self.feature_set,
            "feature_names": list(self.feature_names),
            "standardizer": self.standardizer.to_dict(),
            "selected": [int(i) for i in self.selected],
            "models": {role: m.to_dict() for role, m in self.models.items()},
            "k_scores": {str(k): v for k, v in self.k_scores.items()},
        }

    @classmethod
    def from_dict(cls, doc) -> "FittedMethod":
        if doc.get("format_version") != FORMAT_VERSION:
            raise SchemaMismatch(f"unsupported bundle format_version {doc.get('format_version')!r}")
        return cls(
            method=doc["method"],
            alpha=float(doc["alpha"]),
            feature_names=list(doc["feature_names"]),
            standardizer=Standardizer.from_dict(doc["standardizer"]),
            selected=np.asarray(doc["selected"], dtype=int),
            models={role: RegressorModel.from_dict(m) for role, m in doc["models"].items()},
            target=tuple(doc["target"]) if doc.get("target") else None,
            feature_set=doc.get("feature_set", "both"),
            k_scores={int(k): v for k, v in doc.get("k_scores", {}).items()},
        )


def _fit_models(group, base, Z, y, alpha, opts: FitOptions, seed: int) -> dict:
    q_lo, q_hi = alpha / 2.0, 1.0 - alpha / 2.0
    if group == "gp":
        return {"gp": fit_gp(Z, y, n_restarts=opts.gp_restarts, n_steps=opts.gp_steps, seed=seed).to_model()}
    objectives = {"point": MSE} if group == "point" else {"lo": Pinball(q_lo), "hi": Pinball(q_hi)}
    out = {}
    for role, obj in objectives.items():
        if base == "linear":
            out[role] = fit_ols(Z, y) if obj is MSE else fit_quantile_linear(Z, y, obj.q)
        elif base == "gbt":
            out[role] = fit_gbt(Z, y, obj, replace(opts.gbt, seed=seed))
        else:
            out[role] = fit_mlp(Z, y, obj, replace(opts.mlp, seed=seed))
    return out


def _selection_loss(group, models, Z, y) -> float:
    """Held-out loss used to choose the CFS subset size."""
    if group == "gp":
        mean, var = gp_predict(models["gp"], Z)
        var = np.maximum(var, 1e-12)
        return float(np.mean(0.5 * np.log(2 * math.pi * var) + 0.5 * (y - mean) ** 2 / var))
    if group == "point":
        return float(np.mean((y - predict(models["point"], Z)) ** 2))
    lo, hi = models["lo"], models["hi"]
    return float(np.mean(pinball_loss(y, predict(lo, Z), lo.objective.q))
                 + np.mean(pinball_loss(y, predict(hi, Z), hi.objective.q)))


def fit_method(method: str, X, y, feature_names, alpha: float = 0.1, *, X_select=None, y_select=None,
               k: int | None = None, options: FitOptions | None = None, seed: int = 0,
               target=None, feature_set: str = "both") -> FittedMethod:
    """Fit ``method`` on training rows.

    For CFS-driven bases the subset size is ``k`` when given, otherwise the
    k in 1..k_max with the lowest loss on ``X_select``.  Without selection
    rows, a seeded ``options.select_holdout`` share of the training rows is
    held out to choose k and the final models are refit on every row with
    that k (``select_holdout=0`` falls back to k_max).  Keeping selection
    off the calibration rows is what leaves conformal scores exchangeable.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidConfig(f"alpha must lie in (0, 1), got {alpha}")
    opts = options or FitOptions()
    if not 0.0 <= opts.select_holdout < 1.0:
        raise InvalidConfig(f"select_holdout must lie in [0, 1), got {opts.select_holdout}")
    fam, base = parse_method(method)
    group = model_group(method)[0]
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    std = Standardizer.fit(X)
    Z = std.transform(X)
    d = Z.shape[1]
    if d == 0:
        raise InvalidConfig("no usable (non-constant) feature columns")

    k_scores = {}
    inner = base != "gbt" and k is None and X_select is None and opts.select_holdout > 0
    n_hold = int(math.floor(opts.select_holdout * len(y))) if inner else 0
    if inner and n_hold >= 1 and len(y) - n_hold >= 2:
        perm = np.random.default_rng(seed).permutation(len(y))
        hold, keep = perm[:n_hold], np.sort(perm[n_hold:])
        probe = fit_method(method, X[keep], y[keep], feature_names, alpha, X_select=X[np.sort(hold)],
                           y_select=y[np.sort(hold)], options=opts, seed=seed)
        k = int(len(probe.selected))
        k_scores = dict(probe.k_scores)
        if k > min(opts.k_max, d):
            k = min(opts.k_max, d)

    if base == "gbt":
        selected = np.arange(d)
        models = _fit_models(group, base, Z, y, alpha, opts, seed)
    else:
        k_max = min(opts.k_max, d)
        subsets = cfs_select(Z, y, k_max, opts.cfs_method)
        if k is not None:
            if not 1 <= k <= k_max:
                raise InvalidConfig(f"k must lie in 1..{k_max}, got {k}")
            candidates = [k]
        elif X_select is not None and len(y_select) > 0:
            candidates = list(range(1, k_max + 1))
        else:
            candidates = [k_max]
        Zs = std.transform(X_select) if X_select is not None and len(candidates) > 1 else None
        best = None
        for kk in candidates:
            idx = np.asarray(subsets[kk - 1].indices, dtype=int)
            models_k = _fit_models(group, base, Z[:, idx], y, alpha, opts, seed)
            if Zs is None:
                best = (kk, idx, models_k)
                break
            score = _selection_loss(group, models_k, Zs[:, idx], np.asarray(y_select, float))
            k_scores[kk] = score
            if best is None or score < k_scores[best[0]]:
                best = (kk, idx, models_k)
        _, selected, models = best

    return FittedMethod(method=method if fam != "gp" else "gp", alpha=alpha, feature_names=list(feature_names),
                        standardizer=std, selected=selected, models=models, target=target,
                        feature_set=feature_set, k_scores=k_scores)
