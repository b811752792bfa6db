"""Independent reference computations used to derive frozen test values.

Nothing here imports the package under test; every routine is a direct,
slow transcription of a textbook definition.
"""
from fractions import Fraction
import math

import numpy as np


def quantile_index(m, alpha):
    """ceil((m + 1)(1 - alpha)) in exact rational arithmetic."""
    a = Fraction(str(alpha))
    v = (m + 1) * (1 - a)
    return -((-v.numerator) // v.denominator)


def conformal_quantile(scores, alpha):
    k = quantile_index(len(scores), alpha)
    if k > len(scores):
        return math.inf
    return sorted(scores)[k - 1]


def norm_ppf_bisect(p, lo=-40.0, hi=40.0):
    def cdf(x):
        return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def coverage_pct(lower, upper, y):
    hits = sum(1 for lo, hi, v in zip(lower, upper, y) if lo <= v <= hi)
    return 100.0 * hits / len(y)


def pinball(y, yhat, q):
    r = y - yhat
    return q * r if r >= 0 else (q - 1) * r


def best_constant_pinball(y, q):
    """Brute force: the minimiser is attained at a sample point."""
    best = None
    for c in sorted(set(y)):
        loss = sum(pinball(v, c, q) for v in y)
        if best is None or loss < best[0] - 1e-12:
            best = (loss, c)
    return best[1]


def gp_posterior(Xtr, ytr, Xq, ell, s2, n2, prior_mean):
    """Dense-inverse GP posterior (mean, latent variance)."""
    def k(A, B):
        d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
        return s2 * np.exp(-0.5 * d2 / ell ** 2)
    K = k(Xtr, Xtr) + n2 * np.eye(len(Xtr))
    Kinv = np.linalg.inv(K)
    ks = k(Xq, Xtr)
    mean = prior_mean + ks @ Kinv @ (ytr - prior_mean)
    var = s2 - np.einsum("ij,jk,ik->i", ks, Kinv, ks)
    return mean, var


def walk_tree(x, feature, threshold, left, right, value, root):
    node = root
    while feature[node] >= 0:
        node = left[node] if x[feature[node]] <= threshold[node] else right[node]
    return value[node]


def pearson(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    ac, bc = a - a.mean(), b - b.mean()
    den = math.sqrt((ac ** 2).sum() * (bc ** 2).sum())
    return 0.0 if den == 0 else float((ac * bc).sum() / den)


def cfs_merit(X, y, idx):
    k = len(idx)
    rcf = np.mean([abs(pearson(X[:, j], y)) for j in idx])
    if k == 1:
        return rcf
    pairs = [abs(pearson(X[:, a], X[:, b])) for i, a in enumerate(idx) for b in idx[i + 1:]]
    rff = np.mean(pairs)
    return k * rcf / math.sqrt(k + k * (k - 1) * rff)


def finite_diff_grad(f, theta, idx, h=1e-6):
    out = np.empty(len(idx))
    for n, i in enumerate(idx):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        out[n] = (f(tp) - f(tm)) / (2 * h)
    return out
