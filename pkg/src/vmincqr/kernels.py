"""Hot numeric loops, compiled with numba when available.

Each kernel has a pure-numpy twin with identical semantics.  The compiled
variant is used unless numba is missing or ``VMINCQR_DISABLE_JIT`` is set to a
truthy value before import.  Both variants stay importable under explicit
names (``*_numpy`` / ``*_jit``) so tests and ``benchmarks/bench_kernels.py``
can compare them directly.
"""
import os

import numpy as np

_FLAG = os.environ.get("VMINCQR_DISABLE_JIT", "").strip().lower()

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an install dependency
    HAVE_NUMBA = False

USE_JIT = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


# ---------------------------------------------------------------------------
# regression-tree split search
#
# xs[:, j] holds column j sorted ascending and order[:, j] the matching row
# indices (both computed once per boosting fit).  A candidate split sits
# between sorted positions i and i+1 of feature j wherever the value strictly
# increases.  Gain is the SSE reduction of the node's gradient targets:
#     S_L^2/n_L + S_R^2/n_R - S^2/n
# Scan order is feature-major, position-minor; the first strict maximum wins,
# which breaks ties toward the lower feature index.
# ---------------------------------------------------------------------------

def best_split_numpy(xs, order, g, in_node, s_tot, n_node, min_leaf):
    n, d = xs.shape
    if n < 2 or d == 0:
        return -1, -1, 0.0
    m = in_node[order]
    gm = np.where(m, g[order], 0.0)
    sl = np.cumsum(gm, axis=0)[:-1]
    nl = np.cumsum(m, axis=0, dtype=np.int64)[:-1]
    nr = n_node - nl
    valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
    with np.errstate(divide="ignore", invalid="ignore"):
        sr = s_tot - sl
        gain = sl * sl / nl + sr * sr / nr - s_tot * s_tot / n_node
    gain = np.where(valid, gain, -np.inf)
    flat = gain.T.ravel()
    k = int(np.argmax(flat))
    best = flat[k]
    if not best > 0.0:
        return -1, -1, 0.0
    j, i = divmod(k, n - 1)
    return j, i, float(best)


def _best_split_loop(xs, order, g, in_node, s_tot, n_node, min_leaf):
    n, d = xs.shape
    best = 0.0
    bj = -1
    bi = -1
    base = s_tot * s_tot / n_node
    for j in range(d):
        sl = 0.0
        nl = 0
        for i in range(n - 1):
            r = order[i, j]
            if in_node[r]:
                sl += g[r]
                nl += 1
            if nl < min_leaf:
                continue
            nr = n_node - nl
            if nr < min_leaf:
                break
            if xs[i + 1, j] > xs[i, j]:
                sr = s_tot - sl
                gain = sl * sl / nl + sr * sr / nr - base
                if gain > best:
                    best = gain
                    bj = j
                    bi = i
    return bj, bi, best


# ---------------------------------------------------------------------------
# tree ensemble evaluation
#
# Trees are stored as flat node arrays; feature < 0 marks a leaf.  Rows go
# left when x[feature] <= threshold.  Returns the plain sum of leaf values
# (the caller applies base score and learning rate).
# ---------------------------------------------------------------------------

def apply_trees_numpy(X, feature, threshold, left, right, value, roots, max_depth):
    n = X.shape[0]
    out = np.zeros(n)
    rows = np.arange(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        for _ in range(max_depth):
            f = feature[node]
            internal = f >= 0
            if not internal.any():
                break
            x = X[rows, np.where(internal, f, 0)]
            go_left = x <= threshold[node]
            nxt = np.where(go_left, left[node], right[node])
            node = np.where(internal, nxt, node)
        out += value[node]
    return out


def _apply_trees_loop(X, feature, threshold, left, right, value, roots, max_depth):
    n = X.shape[0]
    out = np.zeros(n)
    for r in range(n):
        acc = 0.0
        for t in range(roots.shape[0]):
            node = roots[t]
            while feature[node] >= 0:
                if X[r, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[r] = acc
    return out


# ---------------------------------------------------------------------------
# linear quantile regression by normalized subgradient descent
#
# Minimises mean pinball loss of y - X1 @ w.  Steps are normalised by the
# subgradient norm.  Every `window` iterations the best loss seen is compared
# with the best at the window start; a gain below max(tol, 0.01 * step) halves
# the step and restarts from the best iterate.  Converged once the step has
# decayed below `min_step` with no such gain, or the subgradient vanishes.
# Returns (best_w, best_loss, iterations, converged, last_window_delta).
# ---------------------------------------------------------------------------

def _mean_pinball(r, q):
    return np.mean(np.maximum(q * r, (q - 1.0) * r))


def pinball_descent_numpy(X1, y, q, w0, step0, min_step, max_iter, window, tol):
    n = X1.shape[0]
    w = w0.copy()
    best_w = w0.copy()
    best = _mean_pinball(y - X1 @ w, q)
    start_best = best
    step = step0
    delta = np.inf
    for it in range(max_iter):
        r = y - X1 @ w
        psi = np.where(r > 0.0, q, np.where(r < 0.0, q - 1.0, 0.0))
        g = -(X1.T @ psi) / n
        gn = np.sqrt(np.dot(g, g))
        if gn == 0.0:
            return best_w, best, it + 1, True, 0.0
        w = w - (step / gn) * g
        loss = _mean_pinball(y - X1 @ w, q)
        if loss < best:
            best = loss
            best_w = w.copy()
        if (it + 1) % window == 0:
            delta = start_best - best
            if delta < max(tol, 0.01 * step):
                if step <= min_step:
                    return best_w, best, it + 1, True, delta
                step *= 0.5
                w = best_w.copy()
            start_best = best
    return best_w, best, max_iter, False, delta


def _pinball_descent_loop(X1, y, q, w0, step0, min_step, max_iter, window, tol):
    n, p = X1.shape
    w = w0.copy()
    best_w = w0.copy()
    r = np.empty(n)
    g = np.empty(p)

    best = 0.0
    for i in range(n):
        ri = y[i] - np.dot(X1[i], w)
        best += max(q * ri, (q - 1.0) * ri)
    best /= n
    start_best = best
    step = step0
    delta = np.inf
    for it in range(max_iter):
        g[:] = 0.0
        for i in range(n):
            ri = y[i] - np.dot(X1[i], w)
            if ri > 0.0:
                psi = q
            elif ri < 0.0:
                psi = q - 1.0
            else:
                psi = 0.0
            for k in range(p):
                g[k] -= X1[i, k] * psi
        gn = 0.0
        for k in range(p):
            g[k] /= n
            gn += g[k] * g[k]
        gn = np.sqrt(gn)
        if gn == 0.0:
            return best_w, best, it + 1, True, 0.0
        for k in range(p):
            w[k] -= (step / gn) * g[k]
        loss = 0.0
        for i in range(n):
            ri = y[i] - np.dot(X1[i], w)
            r[i] = ri
            loss += max(q * ri, (q - 1.0) * ri)
        loss /= n
        if loss < best:
            best = loss
            best_w[:] = w
        if (it + 1) % window == 0:
            delta = start_best - best
            if delta < max(tol, 0.01 * step):
                if step <= min_step:
                    return best_w, best, it + 1, True, delta
                step *= 0.5
                w[:] = best_w
            start_best = best
    return best_w, best, max_iter, False, delta


if HAVE_NUMBA:
    best_split_jit = njit(cache=True)(_best_split_loop)
    apply_trees_jit = njit(cache=True)(_apply_trees_loop)
    pinball_descent_jit = njit(cache=True)(_pinball_descent_loop)
else:  # pragma: no cover
    best_split_jit = _best_split_loop
    apply_trees_jit = _apply_trees_loop
    pinball_descent_jit = _pinball_descent_loop


if USE_JIT:
    best_split = best_split_jit
    apply_trees = apply_trees_jit
    pinball_descent = pinball_descent_jit
else:
    best_split = best_split_numpy
    apply_trees = apply_trees_numpy
    pinball_descent = pinball_descent_numpy


def backend():
    return "numba" if USE_JIT else "numpy"
