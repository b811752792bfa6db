"""Point/interval scoring and the cross-validated benchmark harness."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .conformal import IntervalSet
from .dataset import ChipDataset, SplitSpec, assemble_features, iter_targets, make_folds
from .errors import EmptyInput, InvalidConfig, LengthMismatch, NonPositiveLength, VminError, ZeroVariance
from .pipeline import FitOptions, fit_method, method_label, model_group, parse_method, derive_seed

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
#: point-prediction RMSE band (mV) used as a report annotation only
RMSE_BAND_MV = (2.5, 7.0)


def coverage(intervals: IntervalSet, y) -> float:
    """Percentage of labels inside their closed interval."""
    y = np.asarray(y, dtype=float).ravel()
    if len(intervals) != y.size:
        raise LengthMismatch(f"{len(intervals)} intervals vs {y.size} labels")
    if y.size == 0:
        raise EmptyInput("coverage of an empty batch is undefined")
    inside = (y >= intervals.lower) & (y <= intervals.upper)
    return 100.0 * np.count_nonzero(inside) / y.size


def avg_length(intervals: IntervalSet) -> float:
    if len(intervals) == 0:
        raise EmptyInput("average length of an empty batch is undefined")
    return float(np.mean(intervals.lengths))


def r2_rmse(pred, y):
    """(R^2, RMSE).  Raises ZeroVariance (carrying the RMSE) for a constant target."""
    pred = np.asarray(pred, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if pred.size != y.size or y.size < 2:
        raise LengthMismatch(f"need two equal-length vectors of length >= 2, got {pred.size} and {y.size}")
    ss_res = float(np.sum((y - pred) ** 2))
    rmse = math.sqrt(ss_res / y.size)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVariance(rmse)
    return 1.0 - ss_res / ss_tot, rmse


def onchip_gain(length_parametric_only: float, length_with_onchip: float) -> float:
    """Percent reduction in interval length obtained by adding on-chip features."""
    if not (length_parametric_only > 0 and length_with_onchip > 0):
        raise NonPositiveLength(
            f"lengths must be positive, got {length_parametric_only} and {length_with_onchip}")
    return 100.0 * (length_parametric_only - length_with_onchip) / length_parametric_only


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class EvaluationReport:
    rows: list
    config: dict
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def row(self, method, read_point, temperature):
        for r in self.rows:
            if (r["method"], r["read_point_hours"], r["temperature_celsius"]) == (method, read_point, temperature):
                return r
        raise KeyError((method, read_point, temperature))

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "config": self.config, "rows": self.rows, "errors": self.errors}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, doc) -> "EvaluationReport":
        return cls(rows=list(doc["rows"]), config=dict(doc["config"]), errors=list(doc.get("errors", [])))

    def to_text(self) -> str:
        return format_table(self)


def format_table(report: EvaluationReport) -> str:
    """Fixed-width table: method rows grouped by stress time, (length, coverage) per temperature."""
    temps = sorted({r["temperature_celsius"] for r in report.rows})
    rps = sorted({r["read_point_hours"] for r in report.rows})
    methods = list(dict.fromkeys(r["method"] for r in report.rows))
    index = {(r["method"], r["read_point_hours"], r["temperature_celsius"]): r for r in report.rows}
    mw = max([len(method_label(m)) for m in methods] + [6])
    cell = 22

    def fmt_temp(t):
        return f"{t}C"

    head1 = f"{'Stress':>6}  {'Method':<{mw}}" + "".join(f"{fmt_temp(t):^{cell}}" for t in temps)
    head2 = f"{'(h)':>6}  {'':<{mw}}" + "".join(f"{'Length(mV)':>11}{'Cov(%)':>9}  " for _ in temps)
    rule = "-" * len(head2)
    lines = [head1, head2, rule]
    for rp in rps:
        for k, m in enumerate(methods):
            cells = []
            for t in temps:
                r = index.get((m, rp, t))
                if r is None:
                    cells.append(f"{'n/a':>11}{'n/a':>9}  ")
                else:
                    cells.append(f"{r['avg_length_mv']:>11.2f}{r['coverage_pct']:>9.2f}  ")
            stress = str(rp) if k == 0 else ""
            lines.append(f"{stress:>6}  {method_label(m):<{mw}}" + "".join(cells))
        lines.append(rule)
    cfg = report.config
    lines.append(f"alpha={cfg.get('alpha')}  folds={cfg.get('n_folds')}  seed={cfg.get('seed')}  "
                 f"features={cfg.get('feature_set')}")
    point = [r for r in report.rows if r.get("rmse_mv") is not None]
    if point:
        lo, hi = RMSE_BAND_MV
        inside = sum(lo <= r["rmse_mv"] <= hi for r in point)
        lines.append(f"point RMSE within {lo}-{hi} mV in {inside}/{len(point)} cells (annotation only)")
    for e in report.errors:
        lines.append(f"ERROR {e['method']} @ {e['read_point_hours']}h/{e['temperature_celsius']}C: "
                     f"{e.get('error_type', 'Error')}: {e['error']}")
    return "\n".join(lines) + "\n"


def ablation_table(reports: dict, method: str) -> dict:
    """Per-temperature average length over all read points for each feature set, plus gains.

    ``reports`` maps feature-set name (``parametric``, ``onchip``, ``both``) to
    an :class:`EvaluationReport`.  The gain compares ``parametric`` with ``both``.
    """
    out = {"method": method, "lengths": {}, "gain_pct": {}}
    for name, rep in reports.items():
        rows = [r for r in rep.rows if r["method"] == method]
        if not rows:
            continue
        ts = sorted({r["temperature_celsius"] for r in rows})
        per_t = {str(t): float(np.mean([r["avg_length_mv"] for r in rows if r["temperature_celsius"] == t]))
                 for t in ts}
        per_t["average"] = float(np.mean([per_t[str(t)] for t in ts]))
        out["lengths"][name] = per_t
    if "parametric" in out["lengths"] and "both" in out["lengths"]:
        p, b = out["lengths"]["parametric"], out["lengths"]["both"]
        out["gain_pct"] = {k: onchip_gain(p[k], b[k]) for k in p}
    return out


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

def _fold_digest(folds) -> str:
    h = hashlib.sha256()
    for f in folds:
        for part in (f.train, f.calibration, f.test):
            h.update(np.asarray(part, dtype=np.int64).tobytes())
            h.update(b"|")
    return h.hexdigest()


def run_benchmark(ds: ChipDataset, methods, alpha: float = 0.1, spec: SplitSpec | None = None, *,
                  feature_set: str = "both", read_points=None, temperatures=None,
                  options: FitOptions | None = None, progress=None) -> EvaluationReport:
    """Cross-validated interval evaluation over (method, read point, temperature).

    Folds depend only on the seed, so every method sees identical splits.  In
    each fold the models are fitted on the train split (the CFS subset size
    is chosen on a holdout carved from it), conformal methods are calibrated
    on the calibration split, and intervals are scored on the test fold.  Coverage and length are
    averaged over folds with equal weight; R^2/RMSE use pooled out-of-fold
    point predictions (GP and CP methods only).  Failures are recorded per
    cell instead of aborting the run.
    """
    spec = spec or SplitSpec()
    opts = options or FitOptions()
    methods = [m.strip().lower() for m in methods]
    for m in methods:
        parse_method(m)
    if not 0.0 < alpha < 1.0:
        raise InvalidConfig(f"alpha must lie in (0, 1), got {alpha}")
    folds = make_folds(ds.n, spec)
    targets = list(iter_targets(ds, read_points, temperatures))
    if not targets:
        raise InvalidConfig("no (read point, temperature) targets selected")

    groups = {}
    for m in methods:
        groups.setdefault(model_group(m), []).append(m)

    rows, errors = [], []
    for key in targets:
        X, y, cols = assemble_features(ds, key[0], key[1], feature_set)
        names = [c.name for c in cols]
        per_method = {m: {"cov": [], "len": [], "k": [], "q_hat": []} for m in methods}
        oof = {m: np.full(ds.n, np.nan) for m in methods}
        failed = {}
        for (group, base), members in groups.items():
            for fi, fold in enumerate(folds):
                if all(m in failed for m in members):
                    break
                seed = derive_seed(spec.seed, group, base, key[0], key[1], fi)
                try:
                    fitted = fit_method(members[0], X[fold.train], y[fold.train], names, alpha,
                                        options=opts, seed=seed, target=key, feature_set=feature_set)
                except VminError as exc:
                    for m in members:
                        failed.setdefault(m, exc)
                    continue
                for m in members:
                    if m in failed:
                        continue
                    try:
                        fm = fitted.as_method(m)
                        cal = fm.calibrate(X[fold.calibration], y[fold.calibration]) if fm.needs_calibration else None
                        iv = fm.intervals(X[fold.test])
                        acc = per_method[m]
                        acc["cov"].append(coverage(iv, y[fold.test]))
                        acc["len"].append(avg_length(iv))
                        acc["k"].append(int(len(fm.selected)))
                        acc["q_hat"].append(None if cal is None else cal.q_hat)
                        pt = fm.point(X[fold.test])
                        if pt is not None:
                            oof[m][fold.test] = pt
                    except VminError as exc:
                        failed[m] = exc
                if progress:
                    progress(key, group, base, fi)

        for m in methods:
            if m in failed:
                exc = failed[m]
                errors.append({"method": m, "read_point_hours": key[0], "temperature_celsius": key[1],
                               "error_type": type(exc).__name__, "error": str(exc)})
                log.info("%s @ %s: %s: %s", m, key, type(exc).__name__, exc)
                continue
            acc = per_method[m]
            r2 = rmse = None
            if not np.isnan(oof[m]).any():
                try:
                    r2, rmse = r2_rmse(oof[m], y)
                except ZeroVariance as exc:
                    rmse = exc.rmse
            rows.append({
                "method": m,
                "read_point_hours": key[0],
                "temperature_celsius": key[1],
                "avg_length_mv": float(np.mean(acc["len"])),
                "coverage_pct": float(np.mean(acc["cov"])),
                "r2": r2,
                "rmse_mv": rmse,
                "folds": [{"coverage_pct": c, "avg_length_mv": ln, "k": kk, "q_hat": qh}
                          for c, ln, kk, qh in zip(acc["cov"], acc["len"], acc["k"], acc["q_hat"])],
            })

    order = {m: i for i, m in enumerate(methods)}
    rows.sort(key=lambda r: (r["read_point_hours"], r["temperature_celsius"], order[r["method"]]))
    config = {
        "alpha": alpha,
        "n_folds": spec.n_folds,
        "calibration_fraction": spec.calibration_fraction,
        "seed": int(spec.seed),
        "methods": methods,
        "feature_set": feature_set,
        "n_chips": ds.n,
        "fold_digest": _fold_digest(folds),
        "fold_test_indices": [f.test.tolist() for f in folds],
        "k_max": opts.k_max,
        "cfs_method": opts.cfs_method,
    }
    return EvaluationReport(rows=rows, config=config, errors=errors)
