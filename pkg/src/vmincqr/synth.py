"""Synthetic chip populations shaped like a burn-in Vmin study.

Generative model (all shapes are synthetic, chosen for testability):

* per chip: process coordinates ``z`` (4 x N(0, 1)), a noise-scale coordinate
  ``c ~ U(0.25, 2)``, an aging rate ``a ~ LogNormal(0, 0.5)`` and an anomaly flag;
* parametric columns (read point 0, spread over the test temperatures) are
  noisy linear views of ``(z, c)`` with random per-column offset and units;
* ROD (25 C) and CPD (80 C) on-chip columns view ``z`` and drift with
  ``a * log(1 + hours)``, with fresh measurement noise at every read point;
* ``Vmin(t, T) = 500 + offset_T + beta_T . z + aging_T * a * log(1 + t) + noise``
  in mV, where noise has sd 4 mV, or ``12 * c`` mV when heteroscedastic (large
  enough to dominate the error left by estimating ``z`` from noisy columns);
  anomalous chips get +3 nominal population standard deviations.

Row i depends only on (seed, i), so chips are i.i.d. and a population of N
chips is a prefix of any larger population drawn with the same seed.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import DEFAULT_READ_POINTS, ChipDataset, FeatureColumn, FeatureKind, dataset_schema, write_csv
from .errors import InvalidConfig

DEFAULT_TEMPERATURES = (-45, 25, 125)
ROD_TEMPERATURE = 25
CPD_TEMPERATURE = 80
N_PROCESS = 4

VMIN_CENTER_MV = 500.0
NOISE_MV = 4.0
HETERO_NOISE_MV = 12.0
AGING_MV = 3.0
_BETA = np.array([30.0, 25.0, 20.0, 10.0])
_TEMP_OFFSET = {-45: 25.0, 25: 0.0, 125: 10.0}
_TEMP_AGING = {-45: 1.2, 25: 1.0, 125: 0.8}


@dataclass(frozen=True)
class SynthConfig:
    n_chips: int = 156
    n_parametric: int = 1800
    n_rod: int = 168
    n_cpd: int = 10
    read_points: tuple = DEFAULT_READ_POINTS
    temperatures: tuple = DEFAULT_TEMPERATURES
    heteroscedastic: bool = False
    anomaly_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "read_points", tuple(int(t) for t in self.read_points))
        object.__setattr__(self, "temperatures", tuple(int(t) for t in self.temperatures))
        for name in ("n_chips", "n_parametric", "n_rod", "n_cpd"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.read_points or 0 not in self.read_points or min(self.read_points) < 0:
            raise InvalidConfig(f"read_points must be non-negative and include 0, got {self.read_points}")
        if len(set(self.read_points)) != len(self.read_points):
            raise InvalidConfig(f"read_points must be distinct, got {self.read_points}")
        if not self.temperatures or len(set(self.temperatures)) != len(self.temperatures):
            raise InvalidConfig(f"temperatures must be distinct and non-empty, got {self.temperatures}")
        if not 0.0 <= self.anomaly_fraction < 1.0:
            raise InvalidConfig(f"anomaly_fraction must lie in [0, 1), got {self.anomaly_fraction}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidConfig(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def n_features(self) -> int:
        return self.n_parametric + (self.n_rod + self.n_cpd) * len(self.read_points)


@dataclass(frozen=True, eq=False)
class LatentTruth:
    z: np.ndarray
    noise_scale_coord: np.ndarray
    aging_rate: np.ndarray
    anomalous: np.ndarray

    def noise_sd(self, heteroscedastic: bool) -> np.ndarray:
        if heteroscedastic:
            return HETERO_NOISE_MV * self.noise_scale_coord
        return np.full_like(self.noise_scale_coord, NOISE_MV)


def _temp_coeffs(T, rng):
    beta = _BETA * (1.0 + 0.15 * rng.standard_normal(N_PROCESS))
    off = _TEMP_OFFSET.get(T, 0.0)
    aging = _TEMP_AGING.get(T, 1.0)
    return beta, off, aging


def nominal_population_sd(beta) -> float:
    return float(np.sqrt(np.sum(np.asarray(beta) ** 2)))


def _structure(cfg: SynthConfig):
    """Column loadings and label coefficients from the seed's structure stream."""
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0]))
    n_lat = N_PROCESS + 1

    def loadings(m, on_c):
        L = 0.1 * rng.standard_normal((m, n_lat))
        prim = rng.integers(0, n_lat if on_c else N_PROCESS, m)
        L[np.arange(m), prim] = rng.uniform(0.5, 1.5, m) * rng.choice([-1.0, 1.0], m)
        if not on_c:
            L[:, N_PROCESS] = 0.0
        return L

    par = {
        "L": loadings(cfg.n_parametric, True),
        "noise": rng.uniform(0.5, 3.0, cfg.n_parametric),
        "offset": rng.uniform(-50.0, 50.0, cfg.n_parametric),
        "unit": 10.0 ** rng.uniform(-1.0, 1.0, cfg.n_parametric),
        "temp": np.array([cfg.temperatures[j % len(cfg.temperatures)] for j in range(cfg.n_parametric)]),
    }
    rod = {
        "L": loadings(cfg.n_rod, False),
        "kappa": rng.uniform(0.2, 0.6, cfg.n_rod),
        "noise": np.full(cfg.n_rod, 0.3),
        "offset": rng.uniform(100.0, 200.0, cfg.n_rod),
        "unit": rng.uniform(0.5, 2.0, cfg.n_rod),
    }
    cpd = {
        "L": loadings(cfg.n_cpd, False),
        "kappa": rng.uniform(0.4, 1.0, cfg.n_cpd),
        "noise": np.full(cfg.n_cpd, 0.2),
        "offset": rng.uniform(300.0, 400.0, cfg.n_cpd),
        "unit": rng.uniform(0.5, 2.0, cfg.n_cpd),
    }
    labels = {T: _temp_coeffs(T, rng) for T in cfg.temperatures}
    return par, rod, cpd, labels


def _columns(cfg: SynthConfig, par):
    cols = [FeatureColumn(f"p{j:04d}", FeatureKind.PARAMETRIC, 0, int(par["temp"][j]))
            for j in range(cfg.n_parametric)]
    for t in cfg.read_points:
        cols += [FeatureColumn(f"rod{j:03d}_rp{t}", FeatureKind.RING_OSCILLATOR_DELAY, t, ROD_TEMPERATURE)
                 for j in range(cfg.n_rod)]
        cols += [FeatureColumn(f"cpd{j:02d}_rp{t}", FeatureKind.CRITICAL_PATH_DELAY, t, CPD_TEMPERATURE)
                 for j in range(cfg.n_cpd)]
    return cols


def generate_with_truth(cfg: SynthConfig):
    """Return ``(ChipDataset, LatentTruth)``."""
    par, rod, cpd, label_coef = _structure(cfg)
    cols = _columns(cfg, par)
    n = int(cfg.n_chips)
    rps = cfg.read_points
    X = np.empty((n, cfg.n_features))
    Z = np.empty((n, N_PROCESS))
    C = np.empty(n)
    A = np.empty(n)
    anom = np.zeros(n, dtype=bool)
    Y = {(t, T): np.empty(n) for t in rps for T in cfg.temperatures}

    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 1, i]))
        z = rng.standard_normal(N_PROCESS)
        c = rng.uniform(0.25, 2.0)
        a = rng.lognormal(0.0, 0.5)
        is_anom = rng.random() < cfg.anomaly_fraction
        u = np.append(z, (c - 1.125) / 0.505)

        row = [par["offset"] + par["unit"] * (par["L"] @ u + par["noise"] * rng.standard_normal(cfg.n_parametric))]
        for t in rps:
            h = np.log1p(t)
            for blk in (rod, cpd):
                m = blk["L"].shape[0]
                sig = blk["L"] @ u + blk["kappa"] * a * h + blk["noise"] * rng.standard_normal(m)
                row.append(blk["offset"] + blk["unit"] * sig)
        X[i] = np.concatenate(row)

        sd = HETERO_NOISE_MV * c if cfg.heteroscedastic else NOISE_MV
        for t in rps:
            h = np.log1p(t)
            for T in cfg.temperatures:
                beta, off, aging = label_coef[T]
                v = VMIN_CENTER_MV + off + beta @ z + AGING_MV * aging * a * h + sd * rng.standard_normal()
                if is_anom:
                    v += 3.0 * nominal_population_sd(beta)
                Y[(t, T)][i] = v
        Z[i], C[i], A[i], anom[i] = z, c, a, is_anom

    ds = ChipDataset(features=X, columns=cols, labels=Y,
                     chip_ids=[f"chip{i:05d}" for i in range(n)], read_points=rps)
    return ds, LatentTruth(z=Z, noise_scale_coord=C, aging_rate=A, anomalous=anom)


def generate(cfg: SynthConfig | None = None, **overrides) -> ChipDataset:
    cfg = cfg or SynthConfig(**overrides)
    return generate_with_truth(cfg)[0]


def describe(ds: ChipDataset) -> dict:
    """Column counts per kind (and per read point), label keys and value ranges."""
    by_kind = {k.value: 0 for k in FeatureKind}
    by_kind_rp = {}
    for c in ds.columns:
        by_kind[c.kind.value] += 1
        key = f"{c.kind.value}@{c.read_point_hours}"
        by_kind_rp[key] = by_kind_rp.get(key, 0) + 1
    X = ds.features
    return {
        "n_chips": ds.n,
        "n_features": ds.d,
        "columns_by_kind": by_kind,
        "columns_by_kind_read_point": by_kind_rp,
        "read_points": list(ds.read_points),
        "label_keys": [list(k) for k in ds.labels],
        "feature_range": [float(X.min()), float(X.max())] if X.size else None,
        "label_ranges": {
            f"{k[0]}h@{k[1]}C": {"min": float(v.min()), "max": float(v.max()), "mean": float(v.mean())}
            for k, v in ds.labels.items()
        } if ds.n else {},
    }


def save(ds: ChipDataset, directory, stem: str = "dataset"):
    """Write ``<stem>.csv`` and the ``<stem>.schema.json`` sidecar; return both paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{stem}.csv"
    schema_path = directory / f"{stem}.schema.json"
    write_csv(ds, csv_path)
    schema = dataset_schema(ds).to_dict()
    schema_path.write_text(json.dumps(schema, indent=2) + "\n", encoding="utf-8")
    return csv_path, schema_path


def config_dict(cfg: SynthConfig) -> dict:
    d = asdict(cfg)
    d["read_points"] = list(cfg.read_points)
    d["temperatures"] = list(cfg.temperatures)
    return d
