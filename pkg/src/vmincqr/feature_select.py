"""Correlation-based feature selection (CFS) with greedy forward search."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, TooFewColumns

#: |r| at or above this marks a candidate as an exact copy of a selected column
REDUNDANT = 1.0 - 1e-10


@dataclass(frozen=True)
class FeatureSubset:
    indices: tuple
    merit: float

    @property
    def k(self) -> int:
        return len(self.indices)

    def to_dict(self, column_names=None) -> dict:
        doc = {"k": self.k, "indices": list(self.indices), "merit": self.merit}
        if column_names is not None:
            doc["column_names"] = [column_names[i] for i in self.indices]
        return doc


def pearson(x, y) -> float:
    """Sample Pearson correlation; 0 when either input has zero variance."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape or x.size < 2:
        raise LengthMismatch(f"pearson needs two equal-length vectors of length >= 2, got {x.size} and {y.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    return float(np.clip((xc @ yc) / math.sqrt(sxx * syy), -1.0, 1.0))


def correlate_columns(X, v) -> np.ndarray:
    """Pearson correlation of every column of ``X`` with ``v`` (0 for constant columns)."""
    X = np.asarray(X, dtype=float)
    v = np.asarray(v, dtype=float).ravel()
    if X.shape[0] != v.size:
        raise LengthMismatch(f"X has {X.shape[0]} rows, vector has {v.size}")
    Xc = X - X.mean(axis=0)
    vc = v - v.mean()
    sxx = np.einsum("ij,ij->j", Xc, Xc)
    svv = float(vc @ vc)
    num = Xc.T @ vc
    den = np.sqrt(sxx * svv)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    return np.clip(r, -1.0, 1.0)


def merit(r_cf_sum: float, r_ff_sum: float, k: int) -> float:
    """k * mean|r_cf| / sqrt(k + k(k-1) mean|r_ff|), from the two |r| sums."""
    if k == 1:
        return r_cf_sum
    mean_cf = r_cf_sum / k
    mean_ff = r_ff_sum / (k * (k - 1) / 2)
    return k * mean_cf / math.sqrt(k + k * (k - 1) * mean_ff)


def subset_merit(X, y, indices) -> float:
    """CFS merit of an explicit subset, computed from scratch."""
    idx = list(indices)
    X = np.asarray(X, dtype=float)
    r_cf = sum(abs(pearson(X[:, j], y)) for j in idx)
    r_ff = sum(abs(pearson(X[:, a], X[:, b])) for n, a in enumerate(idx) for b in idx[n + 1:])
    return merit(r_cf, r_ff, len(idx))


def cfs_select(X, y, k_max: int = 10, method: str = "merit") -> list:
    """Nested subsets for k = 1..k_max.

    ``method="merit"`` grows the subset greedily by CFS merit; ``"topk"``
    simply ranks columns by |r| with the target.  Ties go to the lower column
    index.  Under merit search a candidate that duplicates an already chosen
    column (|r| >= REDUNDANT) is passed over while any other candidate is left.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if n != y.size:
        raise LengthMismatch(f"X has {n} rows, y has {y.size}")
    if d < k_max or k_max < 1:
        raise TooFewColumns(f"need at least k_max={k_max} columns, got {d}")
    r_cf = np.abs(correlate_columns(X, y))

    if method == "topk":
        order = np.argsort(-r_cf, kind="stable")[:k_max]
        out = []
        for k in range(1, k_max + 1):
            idx = [int(i) for i in order[:k]]
            out.append(FeatureSubset(tuple(idx), subset_merit(X, y, idx)))
        return out
    if method != "merit":
        raise ValueError(f"unknown CFS method {method!r}")

    chosen = []
    available = np.ones(d, dtype=bool)
    ff_to_chosen = np.zeros(d)          # running sum of |r| with chosen columns
    redundant = np.zeros(d, dtype=bool)
    sum_cf = 0.0
    sum_ff = 0.0
    out = []
    for k in range(1, k_max + 1):
        cand = available & ~redundant
        if not cand.any():
            cand = available
        if k == 1:
            scores = r_cf.copy()
        else:
            tot_ff = sum_ff + ff_to_chosen
            mean_cf = (sum_cf + r_cf) / k
            mean_ff = tot_ff / (k * (k - 1) / 2)
            scores = k * mean_cf / np.sqrt(k + k * (k - 1) * mean_ff)
        scores = np.where(cand, scores, -np.inf)
        j = int(np.argmax(scores))
        chosen.append(j)
        available[j] = False
        sum_cf += r_cf[j]
        sum_ff += ff_to_chosen[j]
        rj = np.abs(correlate_columns(X, X[:, j]))
        ff_to_chosen += rj
        redundant |= rj >= REDUNDANT
        out.append(FeatureSubset(tuple(chosen), float(merit(sum_cf, sum_ff, k))))
    return out


def subsets_to_json(subsets, column_names=None) -> str:
    return json.dumps({"format_version": 1, "subsets": [s.to_dict(column_names) for s in subsets]}, indent=2)
