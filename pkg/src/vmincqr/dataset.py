"""Chip dataset model, CSV ingestion/export, feature assembly and fold splitting.

CSV convention (UTF-8, comma separated, ``.`` decimal point)::

    chip_id, <kind>__rp<hours>__t<temp>__<name>, ..., vmin__rp<hours>__t<temp>, ...

with ``kind`` one of ``param``, ``rod``, ``cpd``.  CSVs that do not follow the
convention can be described by a JSON schema sidecar (see :func:`load_schema`).
"""
from __future__ import annotations

import csv
import enum
import fnmatch
import io
import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateChipId,
    InvalidColumn,
    InvalidConfig,
    MissingColumn,
    NonNumericCell,
    SchemaMismatch,
    TooFewSamples,
    UnknownLabelKey,
)

FORMAT_VERSION = 1
DEFAULT_READ_POINTS = (0, 24, 48, 168, 504, 1008)
CHIP_ID = "chip_id"

_FEATURE_RE = re.compile(r"^(param|rod|cpd)__rp(\d+)__t(-?\d+)__(.+)$")
_LABEL_RE = re.compile(r"^vmin__rp(\d+)__t(-?\d+)$")


class FeatureKind(str, enum.Enum):
    PARAMETRIC = "param"
    RING_OSCILLATOR_DELAY = "rod"
    CRITICAL_PATH_DELAY = "cpd"

    @property
    def on_chip(self) -> bool:
        return self is not FeatureKind.PARAMETRIC


@dataclass(frozen=True)
class FeatureColumn:
    name: str
    kind: FeatureKind
    read_point_hours: int
    temperature_celsius: int

    def __post_init__(self):
        object.__setattr__(self, "kind", FeatureKind(self.kind))
        if self.read_point_hours < 0:
            raise InvalidColumn(f"{self.name}: negative read point {self.read_point_hours}")
        if self.kind is FeatureKind.PARAMETRIC and self.read_point_hours != 0:
            raise InvalidColumn(f"{self.name}: parametric columns are measured at read point 0")

    def csv_name(self) -> str:
        prefix = f"{self.kind.value}__rp{self.read_point_hours}__t{self.temperature_celsius}__"
        return self.name if self.name.startswith(prefix) else prefix + self.name


LabelKey = tuple  # (read_point_hours, temperature_celsius)


def label_column_name(key: LabelKey) -> str:
    return f"vmin__rp{key[0]}__t{key[1]}"


@dataclass(frozen=True, eq=False)
class ChipDataset:
    """Immutable N x D feature matrix with per-column provenance and Vmin labels (mV)."""

    features: np.ndarray
    columns: tuple
    labels: Mapping
    chip_ids: tuple
    read_points: tuple = DEFAULT_READ_POINTS

    def __post_init__(self):
        X = np.array(self.features, dtype=float, copy=True)
        if X.ndim != 2:
            X = X.reshape(len(self.chip_ids), -1)
        cols = tuple(self.columns)
        ids = tuple(str(c) for c in self.chip_ids)
        n = len(ids)
        if X.shape != (n, len(cols)):
            raise SchemaMismatch(f"feature matrix shape {X.shape} does not match {n} chips x {len(cols)} columns")
        if not np.all(np.isfinite(X)):
            raise InvalidColumn("feature matrix contains non-finite values")
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            dup = next(nm for nm in names if names.count(nm) > 1)
            raise InvalidColumn(f"duplicate column name {dup!r}")
        if len(set(ids)) != n:
            seen = set()
            for i, c in enumerate(ids):
                if c in seen:
                    raise DuplicateChipId(c, i)
                seen.add(c)
        allowed = set(self.read_points)
        for c in cols:
            if c.read_point_hours not in allowed:
                raise InvalidColumn(f"{c.name}: read point {c.read_point_hours} not in {sorted(allowed)}")
        labels = {}
        for key, v in self.labels.items():
            key = (int(key[0]), int(key[1]))
            v = np.array(v, dtype=float, copy=True)
            if v.shape != (n,):
                raise SchemaMismatch(f"label {key} has shape {v.shape}, expected ({n},)")
            v.flags.writeable = False
            labels[key] = v
        X.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "chip_ids", ids)
        object.__setattr__(self, "labels", dict(sorted(labels.items())))
        object.__setattr__(self, "read_points", tuple(sorted(allowed)))

    @property
    def n(self) -> int:
        return len(self.chip_ids)

    @property
    def d(self) -> int:
        return len(self.columns)

    @property
    def column_names(self) -> list:
        return [c.name for c in self.columns]

    def label_keys(self) -> list:
        return list(self.labels)

    def take(self, rows) -> "ChipDataset":
        rows = np.asarray(rows, dtype=int)
        return ChipDataset(
            features=self.features[rows],
            columns=self.columns,
            labels={k: v[rows] for k, v in self.labels.items()},
            chip_ids=[self.chip_ids[i] for i in rows],
            read_points=self.read_points,
        )


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

@dataclass
class Schema:
    """Maps CSV headers to column provenance.

    ``features`` entries carry either an exact ``column`` or a glob ``pattern``
    plus ``kind``, ``read_point_hours`` and ``temperature_celsius``; ``labels``
    entries carry ``column`` (or ``pattern``) plus the label key.  The first
    matching entry wins.  Exact-name entries that are absent from the header
    raise :class:`MissingColumn`.
    """

    features: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    chip_id_column: str = CHIP_ID
    read_points: tuple = DEFAULT_READ_POINTS

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "chip_id_column": self.chip_id_column,
            "read_points": list(self.read_points),
            "features": self.features,
            "labels": self.labels,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Schema":
        return cls(
            features=list(doc.get("features", [])),
            labels=list(doc.get("labels", [])),
            chip_id_column=doc.get("chip_id_column", CHIP_ID),
            read_points=tuple(doc.get("read_points", DEFAULT_READ_POINTS)),
        )

    def resolve(self, header: Sequence[str]):
        """Return ``(feature_specs, label_specs)`` as lists of (csv index, FeatureColumn | key)."""
        for entry in self.features + self.labels:
            if "column" in entry and entry["column"] not in header:
                raise MissingColumn(entry["column"], "CSV header")
        feats, labels = [], []
        for idx, name in enumerate(header):
            if name == self.chip_id_column:
                continue
            hit = _match(self.labels, name)
            if hit is not None:
                labels.append((idx, (int(hit["read_point_hours"]), int(hit["temperature_celsius"]))))
                continue
            hit = _match(self.features, name)
            if hit is None:
                raise SchemaMismatch(f"column {name!r} is not described by the schema")
            feats.append((idx, FeatureColumn(name, FeatureKind(hit["kind"]),
                                             int(hit["read_point_hours"]),
                                             int(hit["temperature_celsius"]))))
        for entry in self.features + self.labels:
            if "pattern" in entry and not any(fnmatch.fnmatchcase(h, entry["pattern"]) for h in header):
                raise MissingColumn(entry["pattern"], "CSV header (pattern matched nothing)")
        return feats, labels


def _match(entries, name):
    for e in entries:
        if e.get("column") == name or ("pattern" in e and fnmatch.fnmatchcase(name, e["pattern"])):
            return e
    return None


def conventional_schema(header: Sequence[str], read_points=DEFAULT_READ_POINTS):
    """Resolve a header that follows the ``<kind>__rp<h>__t<T>__<name>`` convention."""
    feats, labels = [], []
    for idx, name in enumerate(header):
        if name == CHIP_ID:
            continue
        m = _LABEL_RE.match(name)
        if m:
            labels.append((idx, (int(m.group(1)), int(m.group(2)))))
            continue
        m = _FEATURE_RE.match(name)
        if not m:
            raise SchemaMismatch(
                f"column {name!r} does not follow '<kind>__rp<hours>__t<temp>__<name>' "
                "or 'vmin__rp<hours>__t<temp>'; supply a schema sidecar"
            )
        feats.append((idx, FeatureColumn(name, FeatureKind(m.group(1)), int(m.group(2)), int(m.group(3)))))
    return feats, labels


def load_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return Schema.from_dict(json.load(fh))


def dataset_schema(ds: ChipDataset) -> Schema:
    """Pattern-based sidecar describing a dataset written by :func:`write_csv`."""
    groups = {}
    for c in ds.columns:
        groups.setdefault((c.kind.value, c.read_point_hours, c.temperature_celsius), None)
    feats = [
        {"pattern": f"{k}__rp{rp}__t{t}__*", "kind": k, "read_point_hours": rp, "temperature_celsius": t}
        for (k, rp, t) in groups
    ]
    labels = [
        {"column": label_column_name(key), "read_point_hours": key[0], "temperature_celsius": key[1]}
        for key in ds.labels
    ]
    return Schema(features=feats, labels=labels, read_points=ds.read_points)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _parse_cell(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise NonNumericCell(row, col, text) from None
    if not math.isfinite(v):
        raise NonNumericCell(row, col, text)
    return v


def load_csv(path, schema: Schema | None = None) -> ChipDataset:
    """Read a chip CSV.  ``schema`` is required only for non-conventional headers.

    Row numbers in errors are 1-based data rows (the header is row 0).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return _read(csv.reader(fh), schema, str(path))


def read_csv_text(text: str, schema: Schema | None = None) -> ChipDataset:
    return _read(csv.reader(io.StringIO(text)), schema, "<string>")


def _read(reader, schema, where):
    try:
        header = next(reader)
    except StopIteration:
        raise MissingColumn(CHIP_ID, f"{where} (empty file)") from None
    header = [h.strip() for h in header]
    id_col = schema.chip_id_column if schema else CHIP_ID
    if id_col not in header:
        raise MissingColumn(id_col, where)
    if schema is None:
        feats, labels = conventional_schema(header)
        read_points = DEFAULT_READ_POINTS
    else:
        feats, labels = schema.resolve(header)
        read_points = schema.read_points
    id_idx = header.index(id_col)

    ids, rows_x, rows_y = [], [], []
    seen = {}
    for r, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise SchemaMismatch(f"{where}: row {r} has {len(row)} cells, header has {len(header)}")
        cid = row[id_idx].strip()
        if cid in seen:
            raise DuplicateChipId(cid, r)
        seen[cid] = r
        ids.append(cid)
        rows_x.append([_parse_cell(row[i], r, header[i]) for i, _ in feats])
        rows_y.append([_parse_cell(row[i], r, header[i]) for i, _ in labels])

    n = len(ids)
    X = np.array(rows_x, dtype=float).reshape(n, len(feats))
    Y = np.array(rows_y, dtype=float).reshape(n, len(labels))
    return ChipDataset(
        features=X,
        columns=[c for _, c in feats],
        labels={key: Y[:, k] for k, (_, key) in enumerate(labels)},
        chip_ids=ids,
        read_points=read_points,
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(ds: ChipDataset, path, conventional: bool = True) -> None:
    """Write ``ds``; values use the shortest repr that round-trips exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(dumps_csv(ds, conventional))


def dumps_csv(ds: ChipDataset, conventional: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [c.csv_name() if conventional else c.name for c in ds.columns]
    keys = list(ds.labels)
    w.writerow([CHIP_ID] + names + [label_column_name(k) for k in keys])
    Y = np.column_stack([ds.labels[k] for k in keys]) if keys else np.zeros((ds.n, 0))
    for i, cid in enumerate(ds.chip_ids):
        w.writerow([cid] + [_fmt(v) for v in ds.features[i]] + [_fmt(v) for v in Y[i]])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# feature assembly
# ---------------------------------------------------------------------------

FEATURE_SETS = ("both", "parametric", "onchip")


def feature_mask(ds: ChipDataset, read_point: int, feature_set: str = "both") -> np.ndarray:
    """Columns usable to predict Vmin at ``read_point``.

    Parametric columns are always taken from read point 0; on-chip columns
    from every read point up to and including ``read_point``.
    """
    if feature_set not in FEATURE_SETS:
        raise InvalidConfig(f"feature set must be one of {FEATURE_SETS}, got {feature_set!r}")
    mask = np.zeros(ds.d, dtype=bool)
    for j, c in enumerate(ds.columns):
        if c.kind is FeatureKind.PARAMETRIC:
            mask[j] = feature_set != "onchip" and c.read_point_hours == 0
        else:
            mask[j] = feature_set != "parametric" and c.read_point_hours <= read_point
    return mask


def assemble_features(ds: ChipDataset, target_read_point: int, target_temperature: int,
                      feature_set: str = "both"):
    """Return ``(X, y, columns)`` for one (read point, temperature) target."""
    key = (int(target_read_point), int(target_temperature))
    if key not in ds.labels:
        raise UnknownLabelKey(key, ds.labels)
    mask = feature_mask(ds, key[0], feature_set)
    cols = [c for c, m in zip(ds.columns, mask) if m]
    return ds.features[:, mask], np.array(ds.labels[key]), cols


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    n_folds: int = 4
    calibration_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.n_folds < 1:
            raise InvalidConfig(f"n_folds must be positive, got {self.n_folds}")
        if not 0.0 < self.calibration_fraction < 1.0:
            raise InvalidConfig(f"calibration_fraction must lie in (0, 1), got {self.calibration_fraction}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidConfig(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    calibration: np.ndarray
    test: np.ndarray


def make_folds(n: int, spec: SplitSpec) -> list:
    """K folds of (train, calibration, test) index arrays.

    Test folds come from one seeded permutation cut into near-equal parts.  The
    non-test remainder of each fold is reshuffled with a fold-specific stream;
    ``floor(calibration_fraction * |non-test|)`` indices go to calibration.
    """
    if n < 2 * spec.n_folds:
        raise TooFewSamples(f"need at least {2 * spec.n_folds} samples for {spec.n_folds} folds, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0]))
    perm = rng.permutation(n)
    folds = []
    for k, test in enumerate(np.array_split(perm, spec.n_folds)):
        in_test = np.zeros(n, dtype=bool)
        in_test[test] = True
        rest = np.flatnonzero(~in_test)
        sub = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 1, k]))
        rest = sub.permutation(rest)
        m = int(math.floor(spec.calibration_fraction * rest.size))
        folds.append(Fold(train=np.sort(rest[m:]), calibration=np.sort(rest[:m]), test=np.sort(test)))
    return folds


# ---------------------------------------------------------------------------
# standardisation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    """z-scoring fitted on training rows; zero-variance columns are dropped."""

    keep: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        keep = np.flatnonzero(scale > 1e-12 * np.maximum(1.0, np.abs(mean)))
        return cls(keep=keep, mean=mean[keep], scale=scale[keep])

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return (X[:, self.keep] - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"keep": self.keep.tolist(), "mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, doc) -> "Standardizer":
        return cls(keep=np.asarray(doc["keep"], dtype=int),
                   mean=np.asarray(doc["mean"], dtype=float),
                   scale=np.asarray(doc["scale"], dtype=float))


def iter_targets(ds: ChipDataset, read_points: Iterable | None = None, temperatures: Iterable | None = None):
    """Label keys in (read point, temperature) order, optionally filtered."""
    for key in sorted(ds.labels):
        if read_points is not None and key[0] not in set(read_points):
            continue
        if temperatures is not None and key[1] not in set(temperatures):
            continue
        yield key
