"""Acceptance checks.  Each test prints one ``PASS``/``FAIL`` line.

Run on its own with::

    pytest tests/test_acceptance.py -s -q

The full-size benchmark check (criterion 10) takes several minutes.
"""
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from oracles import finite_diff_grad, norm_ppf_bisect, quantile_index as qi_ref
from vmincqr import synth
from vmincqr.conformal import (
    cp_calibrate,
    cp_interval,
    cqr_calibrate,
    cqr_interval,
    gp_multipliers,
    qr_interval,
    quantile_index,
)
from vmincqr.dataset import SplitSpec, assemble_features
from vmincqr.metrics import coverage, onchip_gain, run_benchmark
from vmincqr.pipeline import FitOptions
from vmincqr.regressors import MSE, Pinball, fit_gbt, fit_ols, fit_quantile_linear
from vmincqr.regressors.mlp import forward, init_params, loss_and_grad, n_params


@pytest.fixture()
def verdict(capsys):
    def emit(n, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{n:>2}] {title}" + (f"  ({detail})" if detail else ""))
        return ok
    return emit


def _small(n, seed, **kw):
    kw = {"n_parametric": 8, "n_rod": 3, "n_cpd": 2, **kw}
    return synth.generate(n_chips=n, seed=seed, **kw)


def test_c01_marginal_coverage(verdict):
    key = (168, 25)
    Xtr, ytr, _ = assemble_features(_small(400, 100), *key)
    ols = fit_ols(Xtr, ytr)
    lo = fit_quantile_linear(Xtr, ytr, 0.05)
    hi = fit_quantile_linear(Xtr, ytr, 0.95)
    cp_cov, cqr_cov, t_cqr = [], [], 0.0
    for r in range(500):
        X, y, _ = assemble_features(_small(300, 10_000 + r), *key)
        Xc, yc, Xt, yt = X[:100], y[:100], X[100:], y[100:]
        cp_cov.append(coverage(cp_interval(ols, Xt, cp_calibrate(ols, Xc, yc, 0.1)), yt) / 100)
        t0 = time.perf_counter()
        cqr_cov.append(coverage(cqr_interval(lo, hi, Xt, cqr_calibrate(lo, hi, Xc, yc, 0.1)), yt) / 100)
        t_cqr += time.perf_counter() - t0
    a, b = float(np.mean(cp_cov)), float(np.mean(cqr_cov))
    ok = 0.89 <= a <= 0.92 and 0.89 <= b <= 0.92 and t_cqr < 120
    assert verdict(1, "split CP / CQR mean coverage in [0.89, 0.92] over 500 replications", ok,
                   f"CP {a:.4f}, CQR {b:.4f}, CQR-linear {t_cqr:.1f}s")


def test_c02_overfit_gbt_repaired(verdict):
    key = (0, -45)
    X, y, _ = assemble_features(_small(40 + 100 * 350, 7, n_parametric=20, n_rod=4), *key)
    Xtr, ytr = X[:40], y[:40]
    cfg = dict(n_trees=300, max_depth=6, learning_rate=0.5, min_samples_leaf=1)
    lo = fit_gbt(Xtr, ytr, Pinball(0.05), **cfg)
    hi = fit_gbt(Xtr, ytr, Pinball(0.95), **cfg)
    raw, fixed = [], []
    for r in range(100):
        blk = slice(40 + 350 * r, 40 + 350 * (r + 1))
        Xb, yb = X[blk], y[blk]
        Xc, yc, Xt, yt = Xb[:150], yb[:150], Xb[150:], yb[150:]
        raw.append(coverage(qr_interval(lo, hi, Xt), yt))
        fixed.append(coverage(cqr_interval(lo, hi, Xt, cqr_calibrate(lo, hi, Xc, yc, 0.1)), yt))
    a, b = float(np.mean(raw)), float(np.mean(fixed))
    assert verdict(2, "overfit quantile GBT: raw QR < 80%, CQR >= 88%", a < 80 and b >= 88,
                   f"QR {a:.2f}%, CQR {b:.2f}%")


def test_c03_fixed_width_vs_adaptive(verdict):
    # enough parametric columns to make the noise-scale coordinate observable
    cfg = synth.SynthConfig(n_chips=3500, n_parametric=60, n_rod=8, n_cpd=4, heteroscedastic=True, seed=1)
    ds, truth = synth.generate_with_truth(cfg)
    X, y, _ = assemble_features(ds, 0, 25)
    noise = truth.noise_sd(True)
    tr, ca, te = slice(0, 2000), slice(2000, 2500), slice(2500, None)
    ols = fit_ols(X[tr], y[tr])
    cp = cp_interval(ols, X[te], cp_calibrate(ols, X[ca], y[ca], 0.1))
    lo = fit_quantile_linear(X[tr], y[tr], 0.05)
    hi = fit_quantile_linear(X[tr], y[tr], 0.95)
    cqr = cqr_interval(lo, hi, X[te], cqr_calibrate(lo, hi, X[ca], y[ca], 0.1))
    sd = float(np.std(cp.lengths))
    r = float(np.corrcoef(cqr.lengths, noise[te])[0, 1])
    assert verdict(3, "CP length sd = 0; corr(CQR length, noise sd) > 0.5", sd == 0.0 and r > 0.5,
                   f"sd {sd}, r {r:.3f}")


def test_c04_gain_arithmetic(verdict):
    cases = [((25.32, 20.00), 21.01), ((29.44, 23.84), 19.02), ((22.14, 16.43), 25.79)]
    got = [onchip_gain(*pb) for pb, _ in cases]
    ok = all(abs(g - want) <= 0.02 for g, (_, want) in zip(got, cases))
    assert verdict(4, "on-chip gain fixtures within 0.02 points", ok, ", ".join(f"{g:.2f}" for g in got))


def test_c05_onchip_shortens_intervals(verdict):
    ds = synth.generate(n_chips=156, n_parametric=60, n_rod=12, n_cpd=4, seed=5)
    opts = FitOptions(k_max=10)
    reps = {fs: run_benchmark(ds, ["cqr-linear"], 0.1, SplitSpec(seed=0), feature_set=fs, options=opts)
            for fs in ("parametric", "both")}
    worst = []
    ok = True
    for rp in ds.read_points[1:]:
        m = {fs: np.mean([r["avg_length_mv"] for r in rep.rows if r["read_point_hours"] == rp])
             for fs, rep in reps.items()}
        ok &= bool(m["both"] < m["parametric"])
        worst.append(f"{rp}h {m['both']:.1f}<{m['parametric']:.1f}")
    assert verdict(5, "CQR length with on-chip features < parametric-only at each post-zero read point", ok,
                   "; ".join(worst))


def test_c06_gp_multipliers(verdict):
    lo, hi = gp_multipliers(0.1)
    z = norm_ppf_bisect(0.95)
    ok = abs(hi - z) < 1e-4 and abs(lo + z) < 1e-4 and abs(hi - 1.64485) < 1e-4 and gp_multipliers(1.0) == (0.0, 0.0)
    assert verdict(6, "GP multipliers +-1.64485 at alpha 0.1, 0 at alpha 1", ok, f"{lo:.6f}, {hi:.6f}")


def test_c07_mlp_gradients(verdict):
    rng = np.random.default_rng(70)
    d, h = 6, 16
    X = rng.standard_normal((8, d))
    t = rng.standard_normal(8)
    worst = 0.0
    for obj in (MSE, Pinball(0.05), Pinball(0.5), Pinball(0.95)):
        theta = init_params(d, h, rng) + 0.1 * rng.standard_normal(n_params(d, h))
        keep = np.abs(forward(theta, X, h)[0] - t) >= 1e-6
        Xk, tk = X[keep], t[keep]
        idx = rng.choice(theta.size, 100, replace=False)
        _, g = loss_and_grad(theta, Xk, tk, h, obj, 0.01)
        fd = finite_diff_grad(lambda th: loss_and_grad(th, Xk, tk, h, obj, 0.01)[0], theta, idx, h=1e-6)
        worst = max(worst, float(np.max(np.abs(g[idx] - fd) / np.maximum(np.abs(fd), 1e-3))))
    assert verdict(7, "MLP backprop vs central differences, rel err < 1e-4", worst < 1e-4, f"max {worst:.2e}")


def test_c08_quantile_index(verdict):
    want = {(9, 0.1): 9, (99, 0.1): 90, (3, 0.1): 4, (19, 0.05): 19}
    got = {k: quantile_index(*k) for k in want}
    inf = cp_like_infinite(3, 0.1)
    ok = got == want and all(qi_ref(*k) == v for k, v in want.items()) and inf
    assert verdict(8, "quantile index table, (3, 0.1) infinite", ok, str(got))


def cp_like_infinite(m, alpha):
    from vmincqr.conformal import calibrate_scores
    return calibrate_scores(np.zeros(m), alpha).is_infinite


def _cli(*args):
    return subprocess.run([sys.executable, "-m", "vmincqr.cli", *args], capture_output=True, text=True)


def test_c09_benchmark_deterministic(verdict, tmp_path):
    gen = _cli("generate", "--out", str(tmp_path / "d"), "--chips", "80", "--parametric", "40", "--rod", "8",
               "--cpd", "3", "--seed", "3")
    assert gen.returncode == 0, gen.stderr
    outs = []
    for run in ("a", "b"):
        res = _cli("benchmark", "--data", str(tmp_path / "d" / "dataset.csv"), "--read-points", "0,168",
                   "--temperatures", "25", "--out", str(tmp_path / run), "--seed", "4")
        assert res.returncode == 0, res.stderr
        outs.append((tmp_path / run / "report.json").read_bytes())
    assert verdict(9, "benchmark twice with one seed gives byte-identical JSON", outs[0] == outs[1])


def test_c10_full_benchmark(verdict, tmp_path):
    t0 = time.perf_counter()
    res = _cli("benchmark", "--out", str(tmp_path), "--seed", "0")
    wall = time.perf_counter() - t0
    doc = json.loads((tmp_path / "report.json").read_text())
    rows = doc["rows"]
    cells = {(r["read_point_hours"], r["temperature_celsius"]) for r in rows}
    cqr = [r for r in rows if r["method"].startswith("cqr-")]
    low = [(r["method"], r["read_point_hours"], r["temperature_celsius"], round(r["coverage_pct"], 2))
           for r in cqr if r["coverage_pct"] < 85.0]
    ok = (res.returncode == 0 and wall < 900 and len(cells) == 18 and len(rows) == 72 and not low)
    worst = min(r["coverage_pct"] for r in cqr) if cqr else float("nan")
    assert verdict(10, "default benchmark < 15 min, every CQR cell coverage >= 85%", ok,
                   f"{wall / 60:.1f} min, {len(rows)} rows, min CQR coverage {worst:.2f}%"
                   + (f", below band: {low}" if low else ""))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-s", "-q"]))
