"""Time the numba kernels against their numpy twins.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Compiled variants are warmed up once before timing, so the numbers exclude
JIT compilation.  Each kernel is also checked for agreement between backends.
"""
from __future__ import annotations

import argparse
import json
import platform
import time

import numpy as np

from vmincqr import kernels
from vmincqr.regressors import MSE, fit_gbt


def _time(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def split_case(rng, n=88, d=2868):
    X = rng.standard_normal((n, d))
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    g = rng.standard_normal(n)
    in_node = np.ones(n, dtype=np.bool_)
    return (np.ascontiguousarray(xs), np.ascontiguousarray(order), g, in_node, float(g.sum()), n, 1)


def trees_case(rng, n=2000, d=50):
    X = rng.standard_normal((n, d))
    y = X[:, 0] - 2 * X[:, 1] + 0.1 * rng.standard_normal(n)
    m = fit_gbt(X[:200], y[:200], MSE, n_trees=100, max_depth=3)
    p = m.params
    return (np.ascontiguousarray(X), p["feature"], p["threshold"], p["left"], p["right"], p["value"],
            p["roots"], int(m.hyperparams["max_depth"]))


def descent_case(rng, n=88, d=10):
    X = rng.standard_normal((n, d))
    y = X @ rng.standard_normal(d) + rng.standard_normal(n)
    X1 = np.ascontiguousarray(np.column_stack([X, np.ones(n)]))
    w0 = np.zeros(d + 1)
    return (X1, y, 0.95, w0, 0.5, 1e-7, 10_000, 100, 1e-9)


CASES = {
    "best_split (88 x 2868)": ("best_split", split_case),
    "apply_trees (2000 rows, 100 trees)": ("apply_trees", trees_case),
    "pinball_descent (88 x 10, q=0.95)": ("pinball_descent", descent_case),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", dest="json_out", default=None)
    args = ap.parse_args(argv)

    rows = []
    print(f"numba available: {kernels.HAVE_NUMBA}; default backend: {kernels.backend()}")
    print(f"{'kernel':<40}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}  agree")
    for label, (name, make) in CASES.items():
        case = make(np.random.default_rng(args.seed))
        f_np = getattr(kernels, f"{name}_numpy")
        f_jit = getattr(kernels, f"{name}_jit")
        f_jit(*case)  # compile
        t_np, out_np = _time(f_np, case, args.repeat)
        t_jit, out_jit = _time(f_jit, case, args.repeat)
        a = np.atleast_1d(np.asarray(out_np[0] if isinstance(out_np, tuple) else out_np, dtype=float))
        b = np.atleast_1d(np.asarray(out_jit[0] if isinstance(out_jit, tuple) else out_jit, dtype=float))
        agree = bool(np.allclose(a, b, rtol=1e-9, atol=1e-9))
        rows.append({"kernel": label, "numpy_ms": 1e3 * t_np, "numba_ms": 1e3 * t_jit,
                     "speedup": t_np / t_jit if t_jit > 0 else float("inf"), "agree": agree})
        print(f"{label:<40}{1e3 * t_np:>12.3f}{1e3 * t_jit:>12.3f}{t_np / t_jit:>10.1f}  {agree}")

    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump({"format_version": 1, "python": platform.python_version(),
                       "numba_available": kernels.HAVE_NUMBA, "results": rows}, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
