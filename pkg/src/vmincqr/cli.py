"""``vmincqr`` command line: generate, select, fit, calibrate, predict, benchmark, report.

Every command writes a ``*.manifest.json`` next to its primary output with the
resolved options, input/output digests and the tool version, so a run can be
repeated exactly.  Exit codes: 0 success, 2 usage/config error, 3 data error,
4 numerical failure.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from pathlib import Path

import click

from . import __version__, synth
from .conformal import CalibrationResult
from . import errors as err_mod
from .dataset import FEATURE_SETS, SplitSpec, Standardizer, assemble_features, load_csv, load_schema
from .errors import DataError, InfiniteCorrection, InvalidConfig, VminError
from .feature_select import cfs_select
from .metrics import EvaluationReport, ablation_table, run_benchmark
from .pipeline import FitOptions, FittedMethod, all_methods, fit_method
from .regressors.gbt import GBTConfig

log = logging.getLogger("vmincqr")

FORMAT_VERSION = 1
DEFAULT_BENCH_METHODS = "gp,qr-linear,cqr-linear,cqr-gbt"
SEED_ENV = "VMINCQR_SEED"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def _manifest(ctx, primary, outputs, inputs=(), seed=None, started=None):
    """Write ``<primary>.manifest.json`` describing this invocation."""
    primary = Path(primary)
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in ctx.params.items()}
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in params.items()}
    doc = {
        "format_version": FORMAT_VERSION,
        "command": ctx.info_name,
        "tool_version": __version__,
        "config": params,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "wall_time_s": None if started is None else round(time.perf_counter() - started, 3),
    }
    path = primary.with_name(primary.name + ".manifest.json")
    _write_json(path, doc)
    return path


def _load_dataset(path, schema_path=None):
    """Load a CSV, using an explicit schema or a ``<stem>.schema.json`` sidecar if present."""
    path = Path(path)
    if schema_path is None:
        side = path.with_suffix(".schema.json")
        schema_path = side if side.exists() else None
    schema = load_schema(schema_path) if schema_path else None
    inputs = [path] + ([Path(schema_path)] if schema_path else [])
    return load_csv(path, schema), inputs


def _int_list(text, flag):
    if text is None or text == "":
        return None
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise InvalidConfig(f"{flag} expects a comma-separated list of integers, got {text!r}") from None


def _config_callback(ctx, _param, value):
    if value is None:
        return None
    try:
        doc = json.loads(Path(value).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.BadParameter(f"cannot read config {value}: {exc}") from None
    if not isinstance(doc, dict):
        raise click.BadParameter("config must be a JSON object keyed by subcommand")
    ctx.default_map = {k.replace("-", "_"): v for k, v in doc.items()}
    return value


seed_option = click.option("--seed", type=click.IntRange(0, 2**63 - 1), envvar=SEED_ENV, default=0,
                           show_default=True, show_envvar=True, help="Master seed.")
target_options = [
    click.option("--read-point", "read_point", type=int, required=True, help="Target read point (hours)."),
    click.option("--temperature", type=int, required=True, help="Target temperature (C)."),
    click.option("--features", "feature_set", type=click.Choice(FEATURE_SETS), default="both", show_default=True),
]


def _apply(options):
    def deco(f):
        for opt in reversed(options):
            f = opt(f)
        return f
    return deco


# ---------------------------------------------------------------------------
# group
# ---------------------------------------------------------------------------

class _Group(click.Group):
    """Turns library errors into a one-line message and the matching exit code."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except VminError as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            if isinstance(exc, InfiniteCorrection):
                click.echo("hint: the calibration set is too small for this alpha; add calibration rows "
                           "or raise alpha", err=True)
            ctx.exit(exc.exit_code)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(3)


@click.group(cls=_Group)
@click.version_option(__version__, prog_name="vmincqr")
@click.option("--config", type=click.Path(dir_okay=False), callback=_config_callback, is_eager=True,
              expose_value=False, help="JSON file of per-subcommand option defaults.")
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def cli(verbose):
    """Vmin interval prediction with conformal calibration."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

@cli.command()
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--stem", default="dataset", show_default=True)
@click.option("--chips", type=int, default=156, show_default=True)
@click.option("--parametric", type=int, default=1800, show_default=True)
@click.option("--rod", type=int, default=168, show_default=True)
@click.option("--cpd", type=int, default=10, show_default=True)
@click.option("--read-points", default="0,24,48,168,504,1008", show_default=True)
@click.option("--temperatures", default="-45,25,125", show_default=True)
@click.option("--heteroscedastic/--homoscedastic", default=False, show_default=True)
@click.option("--anomaly-fraction", type=float, default=0.0, show_default=True)
@seed_option
@click.pass_context
def generate(ctx, out_dir, stem, chips, parametric, rod, cpd, read_points, temperatures,
             heteroscedastic, anomaly_fraction, seed):
    """Write a synthetic chip population as CSV + schema sidecar."""
    started = time.perf_counter()
    for flag, v in (("--chips", chips), ("--parametric", parametric), ("--rod", rod), ("--cpd", cpd)):
        if v < 1:
            raise InvalidConfig(f"{flag} must be a positive integer, got {v}")
    cfg = synth.SynthConfig(n_chips=chips, n_parametric=parametric, n_rod=rod, n_cpd=cpd,
                            read_points=tuple(_int_list(read_points, "--read-points")),
                            temperatures=tuple(_int_list(temperatures, "--temperatures")),
                            heteroscedastic=heteroscedastic, anomaly_fraction=anomaly_fraction, seed=seed)
    ds = synth.generate(cfg)
    csv_path, schema_path = synth.save(ds, out_dir, stem)
    desc_path = _write_json(out_dir / f"{stem}.describe.json",
                            {"format_version": FORMAT_VERSION, "config": synth.config_dict(cfg), **synth.describe(ds)})
    _manifest(ctx, csv_path, [csv_path, schema_path, desc_path], seed=seed, started=started)
    click.echo(f"wrote {csv_path} ({ds.n} chips x {ds.d} features)")


# ---------------------------------------------------------------------------
# select
# ---------------------------------------------------------------------------

@cli.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False), default=None)
@_apply(target_options)
@click.option("--k-max", type=click.IntRange(1), default=10, show_default=True)
@click.option("--cfs", "cfs_method", type=click.Choice(["merit", "topk"]), default="merit", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.pass_context
def select(ctx, data, schema_path, read_point, temperature, feature_set, k_max, cfs_method, out):
    """Nested CFS feature subsets (k = 1..k-max) for one target."""
    started = time.perf_counter()
    ds, inputs = _load_dataset(data, schema_path)
    X, y, cols = assemble_features(ds, read_point, temperature, feature_set)
    std = Standardizer.fit(X)
    names = [cols[j].name for j in std.keep]
    subsets = cfs_select(std.transform(X), y, min(k_max, len(names)), cfs_method)
    doc = {"format_version": FORMAT_VERSION, "target": [read_point, temperature], "feature_set": feature_set,
           "method": cfs_method, "subsets": [s.to_dict(names) for s in subsets]}
    _write_json(out, doc)
    _manifest(ctx, out, [out], inputs, started=started)
    click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------
# fit / calibrate / predict
# ---------------------------------------------------------------------------

@cli.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True,
              help="Training CSV.")
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--select-data", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="Held-out CSV used to choose the CFS subset size (default: a 25% holdout of --data).")
@click.option("--method", type=click.Choice(all_methods()), required=True)
@_apply(target_options)
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--k", type=click.IntRange(1), default=None, help="Fixed CFS subset size.")
@click.option("--k-max", type=click.IntRange(1), default=10, show_default=True)
@click.option("--n-trees", type=click.IntRange(0), default=100, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@seed_option
@click.pass_context
def fit(ctx, data, schema_path, select_data, method, read_point, temperature, feature_set, alpha, k, k_max,
        n_trees, out, seed):
    """Fit one interval method on a training CSV and save the model bundle."""
    started = time.perf_counter()
    ds, inputs = _load_dataset(data, schema_path)
    X, y, cols = assemble_features(ds, read_point, temperature, feature_set)
    names = [c.name for c in cols]
    Xs = ys = None
    if select_data is not None:
        sel, more = _load_dataset(select_data)
        inputs += more
        Xsel, ys, _ = assemble_features(sel, read_point, temperature, feature_set)
        Xs = Xsel
    opts = FitOptions(k_max=k_max, gbt=GBTConfig(n_trees=n_trees))
    fm = fit_method(method, X, y, names, alpha, X_select=Xs, y_select=ys, k=k, options=opts, seed=seed,
                    target=(read_point, temperature), feature_set=feature_set)
    _write_json(out, fm.to_dict())
    _manifest(ctx, out, [out], inputs, seed=seed, started=started)
    click.echo(f"wrote {out} (method {fm.method}, {len(fm.selected)} features)")


def _load_bundle(path) -> FittedMethod:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a JSON model bundle ({exc})") from None
    return FittedMethod.from_dict(doc)


def _bundle_features(fm: FittedMethod, ds):
    cols = fm.align(ds.column_names)
    return ds.features[:, cols]


@cli.command()
@click.option("--model", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--data", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True,
              help="Calibration CSV (labels required).")
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.pass_context
def calibrate(ctx, model, data, schema_path, out):
    """Conformal correction q_hat for a cp-* or cqr-* bundle."""
    started = time.perf_counter()
    fm = _load_bundle(model)
    if not fm.needs_calibration:
        raise InvalidConfig(f"method {fm.method} is not conformal; nothing to calibrate")
    ds, inputs = _load_dataset(data, schema_path)
    if fm.target is None or tuple(fm.target) not in ds.labels:
        raise DataError(f"calibration data has no label for target {fm.target}")
    cal = fm.calibrate(_bundle_features(fm, ds), ds.labels[tuple(fm.target)])
    _write_json(out, cal.to_dict())
    _manifest(ctx, out, [out], [model] + inputs, started=started)
    if cal.is_infinite:
        click.echo(f"warning: calibration set of M={cal.m} is too small for alpha={cal.alpha}; "
                   "q_hat is infinite", err=True)
    click.echo(f"wrote {out} (M={cal.m}, q_hat={cal.q_hat:.6g})")


@cli.command()
@click.option("--model", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--calibration", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--data", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.pass_context
def predict(ctx, model, calibration, data, schema_path, out):
    """Write chip_id, lower_mv, upper_mv, alpha for every input row."""
    started = time.perf_counter()
    fm = _load_bundle(model)
    inputs = [model]
    cal = None
    if calibration is not None:
        cal = CalibrationResult.from_dict(json.loads(calibration.read_text(encoding="utf-8")))
        inputs.append(calibration)
    elif fm.needs_calibration:
        raise InvalidConfig(f"method {fm.method} needs --calibration")
    if cal is not None and cal.is_infinite:
        raise InfiniteCorrection(cal.quantile_index, cal.m)
    schema = load_schema(schema_path) if schema_path else None
    ds = load_csv(data, schema)
    inputs += [data] + ([Path(schema_path)] if schema_path else [])
    X = _bundle_features(fm, ds)
    iv = fm.intervals(X, cal)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chip_id", "lower_mv", "upper_mv", "alpha"])
        for cid, lo, hi in zip(ds.chip_ids, iv.lower, iv.upper):
            w.writerow([cid, repr(float(lo)), repr(float(hi)), repr(float(iv.alpha))])
    _manifest(ctx, out, [out], inputs, started=started)
    click.echo(f"wrote {out} ({ds.n} rows)")


# ---------------------------------------------------------------------------
# benchmark / report
# ---------------------------------------------------------------------------

def _exit_for(errors) -> int:
    code = 0
    for e in errors:
        cls = getattr(err_mod, e.get("error_type", ""), None)
        c = getattr(cls, "exit_code", 4) if isinstance(cls, type) else 4
        code = max(code, c)
    return code


@cli.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="Dataset CSV; omit to benchmark a default synthetic population.")
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--methods", default=DEFAULT_BENCH_METHODS, show_default=True)
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--folds", type=click.IntRange(1), default=4, show_default=True)
@click.option("--calibration-fraction", type=float, default=0.25, show_default=True)
@click.option("--features", "feature_set", type=click.Choice(FEATURE_SETS + ("all",)), default="both",
              show_default=True, help="'all' runs parametric, onchip and both and writes the gain table.")
@click.option("--read-points", default=None, help="Comma-separated subset of read points.")
@click.option("--temperatures", default=None, help="Comma-separated subset of temperatures.")
@click.option("--k-max", type=click.IntRange(1), default=10, show_default=True)
@click.option("--cfs", "cfs_method", type=click.Choice(["merit", "topk"]), default="merit", show_default=True)
@click.option("--chips", type=int, default=156, show_default=True, help="Synthetic population size.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@seed_option
@click.pass_context
def benchmark(ctx, data, schema_path, methods, alpha, folds, calibration_fraction, feature_set, read_points,
              temperatures, k_max, cfs_method, chips, out_dir, seed):
    """Cross-validated length/coverage report over every (read point, temperature)."""
    started = time.perf_counter()
    if not 0.0 < alpha < 1.0:
        raise InvalidConfig(f"--alpha must lie in (0, 1), got {alpha}")
    if data is None:
        if chips < 1:
            raise InvalidConfig(f"--chips must be a positive integer, got {chips}")
        ds, inputs = synth.generate(n_chips=chips, seed=seed), []
    else:
        ds, inputs = _load_dataset(data, schema_path)
    meths = [m.strip() for m in methods.split(",") if m.strip()]
    spec = SplitSpec(n_folds=folds, calibration_fraction=calibration_fraction, seed=seed)
    opts = FitOptions(k_max=k_max, cfs_method=cfs_method)
    rps = _int_list(read_points, "--read-points")
    temps = _int_list(temperatures, "--temperatures")
    sets = FEATURE_SETS if feature_set == "all" else (feature_set,)

    out_dir.mkdir(parents=True, exist_ok=True)
    outputs, reports, all_errors = [], {}, []
    for fs in sets:
        rep = run_benchmark(ds, meths, alpha, spec, feature_set=fs, read_points=rps, temperatures=temps,
                            options=opts)
        reports[fs] = rep
        stem = "report" if len(sets) == 1 else f"report_{fs}"
        jp, tp = out_dir / f"{stem}.json", out_dir / f"{stem}.txt"
        jp.write_text(rep.to_json(), encoding="utf-8")
        tp.write_text(rep.to_text(), encoding="utf-8")
        outputs += [jp, tp]
        all_errors += rep.errors
        click.echo(rep.to_text())
    if len(sets) > 1:
        gains = {"format_version": FORMAT_VERSION,
                 "tables": [ablation_table(reports, m) for m in meths if any(
                     r["method"] == m for rep in reports.values() for r in rep.rows)]}
        outputs.append(_write_json(out_dir / "ablation.json", gains))
    _manifest(ctx, out_dir / "benchmark", outputs, inputs, seed=seed, started=started)
    if all_errors:
        click.echo(f"{len(all_errors)} cell(s) failed:", err=True)
        for e in all_errors:
            click.echo(f"  {e['method']} @ {e['read_point_hours']}h/{e['temperature_celsius']}C: {e['error_type']}: {e['error']}",
                       err=True)
        ctx.exit(_exit_for(all_errors))


@cli.command()
@click.argument("reports", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--ablation", is_flag=True,
              help="Treat the reports as parametric/onchip/both runs (by config) and print the gain table.")
@click.option("--method", default="cqr-linear", show_default=True, help="Method for the gain table.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.pass_context
def report(ctx, reports, ablation, method, out):
    """Re-render saved JSON reports as text, or combine them into a gain table."""
    loaded = []
    for p in reports:
        doc = json.loads(p.read_text(encoding="utf-8"))
        if doc.get("format_version") != FORMAT_VERSION:
            raise DataError(f"{p}: unsupported report format_version {doc.get('format_version')!r}")
        loaded.append(EvaluationReport.from_dict(doc))
    if ablation:
        by_set = {rep.config.get("feature_set", str(i)): rep for i, rep in enumerate(loaded)}
        tab = ablation_table(by_set, method)
        text = _format_gain(tab)
    else:
        text = "\n".join(rep.to_text() for rep in loaded)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        _manifest(ctx, out, [out], list(reports))
    click.echo(text, nl=False)


def _format_gain(tab) -> str:
    keys = None
    lines = [f"Average interval length (mV), {tab['method']}"]
    for name, per in tab["lengths"].items():
        keys = keys or list(per)
        if len(lines) == 1:
            lines.append(f"{'features':<12}" + "".join(f"{k:>10}" for k in keys))
        lines.append(f"{name:<12}" + "".join(f"{per[k]:>10.2f}" for k in keys))
    if tab["gain_pct"]:
        lines.append(f"{'gain (%)':<12}" + "".join(f"{tab['gain_pct'][k]:>10.2f}" for k in keys))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv=None):
    return cli.main(args=argv, prog_name="vmincqr")


if __name__ == "__main__":
    main()
