"""Interval constructors: Gaussian-process, raw quantile regression, split CP and CQR.

Split conformal calibration takes the ``ceil((M + 1)(1 - alpha))``-th smallest
calibration score as the correction.  When that index exceeds M the
correction is infinite and is reported as such rather than clamped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import AlphaOutOfRange, DimensionMismatch, EmptyCalibrationSet, InfiniteCorrection, LengthMismatch
from .regressors.base import RegressorModel, predict

FORMAT_VERSION = 1


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    alpha: float

    @property
    def length(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True, eq=False)
class IntervalSet:
    """A batch of closed intervals [lower_i, upper_i] built for one alpha."""

    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    #: common length of every interval when the constructor guarantees one
    width: float | None = None

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise LengthMismatch(f"{lo.size} lower bounds vs {hi.size} upper bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def __len__(self):
        return self.lower.size

    def __iter__(self):
        for lo, hi in zip(self.lower, self.upper):
            yield PredictionInterval(float(lo), float(hi), self.alpha)

    def __getitem__(self, i):
        return PredictionInterval(float(self.lower[i]), float(self.upper[i]), self.alpha)

    @property
    def lengths(self) -> np.ndarray:
        # upper - lower carries rounding from f +- q; a fixed width is exact
        if self.width is not None:
            return np.full(self.lower.size, float(self.width))
        return self.upper - self.lower

    @classmethod
    def from_bounds(cls, lower, upper, alpha) -> "IntervalSet":
        """Swap any crossed pair so that lower <= upper."""
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        return cls(np.minimum(lo, hi), np.maximum(lo, hi), alpha)


# ---------------------------------------------------------------------------
# Gaussian process
# ---------------------------------------------------------------------------

def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def norm_ppf(p: float) -> float:
    """Inverse standard-normal CDF by bracketed root finding (abs. error < 1e-10)."""
    if not 0.0 < p < 1.0:
        raise AlphaOutOfRange(p, "(0, 1) for a probability")
    if p == 0.5:
        return 0.0
    lo, hi = -40.0, 40.0
    return brentq(lambda x: norm_cdf(x) - p, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)


def gp_multipliers(alpha: float):
    """(K_lo, K_hi) = (Phi^-1(alpha/2), Phi^-1(1 - alpha/2))."""
    if not 0.0 < alpha <= 1.0:
        raise AlphaOutOfRange(alpha, "(0, 1]")
    return norm_ppf(alpha / 2.0), norm_ppf(1.0 - alpha / 2.0)


def gp_interval(mean, variance, alpha: float) -> IntervalSet:
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if mean.shape != variance.shape:
        raise LengthMismatch(f"{mean.size} means vs {variance.size} variances")
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    k_lo, k_hi = gp_multipliers(alpha)
    sd = np.sqrt(variance)
    return IntervalSet(mean + k_lo * sd, mean + k_hi * sd, alpha)


# ---------------------------------------------------------------------------
# raw quantile regression
# ---------------------------------------------------------------------------

def _check_pair(model_lo: RegressorModel, model_hi: RegressorModel):
    if model_lo.d_features != model_hi.d_features:
        raise DimensionMismatch(
            f"lower model uses {model_lo.d_features} features, upper uses {model_hi.d_features}")


def _pair_alpha(model_lo, model_hi, default=None):
    qlo, qhi = model_lo.objective.q, model_hi.objective.q
    if default is not None:
        return default
    if qlo is not None and qhi is not None:
        return float(round(qlo + (1.0 - qhi), 12))
    return float("nan")


def qr_interval(model_lo: RegressorModel, model_hi: RegressorModel, X, alpha: float | None = None) -> IntervalSet:
    """[f_lo(x), f_hi(x)] per row, crossed pairs swapped.

    ``alpha`` defaults to q_lo + (1 - q_hi) read off the two pinball objectives.
    """
    _check_pair(model_lo, model_hi)
    return IntervalSet.from_bounds(predict(model_lo, X), predict(model_hi, X),
                                   _pair_alpha(model_lo, model_hi, alpha))


# ---------------------------------------------------------------------------
# conformal calibration
# ---------------------------------------------------------------------------

def quantile_index(m: int, alpha: float) -> int:
    """ceil((M + 1)(1 - alpha)).

    A 1e-9 guard absorbs binary rounding so that e.g. (99, 0.1) gives 90, not 91.
    """
    if not 0.0 < alpha < 1.0:
        raise AlphaOutOfRange(alpha)
    return int(math.ceil((m + 1) * (1.0 - alpha) - 1e-9))


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    q_hat: float
    scores: np.ndarray | None
    quantile_index: int
    alpha: float
    m: int
    method: str = "cp"

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.q_hat)

    def require_finite(self):
        if self.is_infinite:
            raise InfiniteCorrection(self.quantile_index, self.m)
        return self.q_hat

    def to_dict(self) -> dict:
        doc = {
            "format_version": FORMAT_VERSION,
            "method": self.method,
            "alpha": self.alpha,
            "M": self.m,
            "quantile_index": self.quantile_index,
            "q_hat": None if self.is_infinite else self.q_hat,
            "infinite": self.is_infinite,
        }
        if self.scores is not None and self.scores.size:
            pct = (0, 5, 25, 50, 75, 95, 100)
            vals = np.percentile(self.scores, pct)
            doc["score_percentiles"] = {str(p): float(v) for p, v in zip(pct, vals)}
        return doc

    @classmethod
    def from_dict(cls, doc) -> "CalibrationResult":
        q = math.inf if doc.get("infinite") or doc.get("q_hat") is None else float(doc["q_hat"])
        return cls(q_hat=q, scores=None, quantile_index=int(doc["quantile_index"]),
                   alpha=float(doc["alpha"]), m=int(doc["M"]), method=doc.get("method", "cp"))


def calibrate_scores(scores, alpha: float, method: str = "cp") -> CalibrationResult:
    """Order-statistic correction from a vector of conformity scores."""
    scores = np.asarray(scores, dtype=float).ravel()
    m = scores.size
    if m == 0:
        raise EmptyCalibrationSet("calibration set is empty")
    k = quantile_index(m, alpha)
    if k > m:
        q = math.inf
    elif k < 1:
        q = -math.inf
    else:
        q = float(np.partition(scores, k - 1)[k - 1])
    return CalibrationResult(q_hat=q, scores=scores, quantile_index=k, alpha=alpha, m=m, method=method)


def cp_scores(model: RegressorModel, X, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    pred = predict(model, X)
    if pred.size != y.size:
        raise LengthMismatch(f"{pred.size} predictions vs {y.size} labels")
    return np.abs(y - pred)


def cqr_scores(model_lo: RegressorModel, model_hi: RegressorModel, X, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    raw = qr_interval(model_lo, model_hi, X)
    if len(raw) != y.size:
        raise LengthMismatch(f"{len(raw)} intervals vs {y.size} labels")
    return np.maximum(raw.lower - y, y - raw.upper)


def cp_calibrate(model: RegressorModel, X_cal, y_cal, alpha: float) -> CalibrationResult:
    """Absolute-residual scores on the calibration set."""
    if np.asarray(y_cal).size == 0:
        raise EmptyCalibrationSet("calibration set is empty")
    return calibrate_scores(cp_scores(model, X_cal, y_cal), alpha, "cp")


def cqr_calibrate(model_lo: RegressorModel, model_hi: RegressorModel, X_cal, y_cal, alpha: float) -> CalibrationResult:
    """Signed interval-excess scores max{f_lo(x) - y, y - f_hi(x)}; may be negative."""
    if np.asarray(y_cal).size == 0:
        raise EmptyCalibrationSet("calibration set is empty")
    return calibrate_scores(cqr_scores(model_lo, model_hi, X_cal, y_cal), alpha, "cqr")


def cp_interval(model: RegressorModel, X, cal: CalibrationResult) -> IntervalSet:
    """[f(x) - q_hat, f(x) + q_hat]: every interval has length 2 q_hat."""
    q = cal.require_finite()
    pred = predict(model, X)
    return IntervalSet(pred - q, pred + q, cal.alpha, width=2.0 * q)


def cqr_interval(model_lo: RegressorModel, model_hi: RegressorModel, X, cal: CalibrationResult) -> IntervalSet:
    """Raw QR interval widened by q_hat on both sides (narrowed when q_hat < 0).

    An interval narrowed past zero width collapses to its midpoint.
    """
    q = cal.require_finite()
    raw = qr_interval(model_lo, model_hi, X, cal.alpha)
    lo = raw.lower - q
    hi = raw.upper + q
    crossed = lo > hi
    if crossed.any():
        mid = 0.5 * (raw.lower + raw.upper)
        lo = np.where(crossed, mid, lo)
        hi = np.where(crossed, mid, hi)
    return IntervalSet(lo, hi, cal.alpha)
