"""Tabular data ingestion, min-max normalization and the train/val/test split.

Splitting follows the unsupervised protocol: every labelled anomaly goes to
the test set, normals are subsampled so the test set is balanced 50:50, and
the remaining normals are divided 85:15 into training and validation sets.
Training and validation therefore only ever contain label-0 rows.

All randomness comes from ``numpy.random.Generator(PCG64(seed))``. PCG64 is a
fully specified generator, so a given seed reproduces the same split on every
platform.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TRAIN_FRACTION = 0.85


class DataError(ValueError):
    """Raised for malformed input data or impossible splits."""


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Return the project's canonical seeded generator (PCG64)."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with optional binary labels.

    Attributes:
        features: Array of shape (n_rows, d), float64, all finite.
        labels: Optional int array of length n_rows with values in {0, 1}.
        feature_names: Optional column names, one per feature.
        row_ids: Row indices into the source dataset this was cut from.
    """

    features: np.ndarray
    labels: np.ndarray | None = None
    feature_names: tuple[str, ...] | None = None
    row_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        x = np.array(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else x.reshape(0, 0)
        if x.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain NaN or Inf")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)

        if self.labels is not None:
            y = np.asarray(self.labels).astype(np.int64)
            if y.shape != (x.shape[0],):
                raise DataError(
                    f"labels must have length {x.shape[0]}, got shape {y.shape}"
                )
            if not np.all((y == 0) | (y == 1)):
                raise DataError("labels must be 0 or 1")
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

        if self.feature_names is not None:
            names = tuple(self.feature_names)
            if len(names) != x.shape[1]:
                raise DataError(
                    f"expected {x.shape[1]} feature names, got {len(names)}"
                )
            object.__setattr__(self, "feature_names", names)

        ids = (
            np.arange(x.shape[0], dtype=np.int64)
            if self.row_ids is None
            else np.asarray(self.row_ids, dtype=np.int64)
        )
        ids.setflags(write=False)
        object.__setattr__(self, "row_ids", ids)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> Dataset:
        """Rows ``idx`` (positions into this dataset), keeping source row ids."""
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            features=self.features[idx].reshape(len(idx), self.d),
            labels=None if self.labels is None else self.labels[idx],
            feature_names=self.feature_names,
            row_ids=self.row_ids[idx],
        )

    def with_features(self, features: np.ndarray) -> Dataset:
        return Dataset(features, self.labels, self.feature_names, self.row_ids)


def load_csv(path: str | Path, label_column: str | None = None) -> Dataset:
    """Read a headed, comma-separated numeric table.

    Args:
        path: CSV file. Quoting is not supported; a quote character anywhere
            is an error.
        label_column: Name of the column holding 0/1 labels. When omitted every
            column is treated as a feature.

    Raises:
        FileNotFoundError: The file does not exist.
        DataError: Missing header, a cell that is not a finite number (the
            message names the 1-based data row and the column), or a label
            outside {0, 1}.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if '"' in text or "'" in text:
        raise DataError(f"{path}: quoted fields are not supported")

    rows = list(csv.reader(text.splitlines()))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: missing header row")
    header = [c.strip() for c in rows[0]]
    if label_column is not None and label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not in header")

    values = np.empty((len(rows) - 1, len(header)), dtype=np.float64)
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {r} has {len(row)} cells, header has {len(header)}"
            )
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise DataError(
                    f"{path}: cannot parse {cell.strip()!r} at row {r}, "
                    f"column {header[c]!r}"
                )
            values[r - 1, c] = v

    if label_column is None:
        return Dataset(values, feature_names=tuple(header))

    li = header.index(label_column)
    raw = values[:, li]
    bad = np.flatnonzero((raw != 0) & (raw != 1))
    if bad.size:
        raise DataError(
            f"{path}: label {raw[bad[0]]!r} at row {bad[0] + 1} is not 0 or 1"
        )
    keep = [j for j in range(len(header)) if j != li]
    return Dataset(
        values[:, keep],
        labels=raw.astype(np.int64),
        feature_names=tuple(header[j] for j in keep),
    )


def write_csv(data: Dataset, path: str | Path, label_column: str = "label") -> None:
    """Write ``data`` in the format :func:`load_csv` reads."""
    names = data.feature_names or tuple(f"x{j}" for j in range(data.d))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(names) + ([label_column] if data.labels is not None else [])
        w.writerow(header)
        for i in range(data.n_rows):
            row = [repr(float(v)) for v in data.features[i]]
            if data.labels is not None:
                row.append(str(int(data.labels[i])))
            w.writerow(row)


@dataclass(frozen=True)
class Normalizer:
    """Per-feature min-max scaling fitted on training rows."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.minimum, dtype=np.float64)
        hi = np.asarray(self.maximum, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DataError("minimum and maximum must be vectors of equal length")
        if np.any(lo > hi):
            raise DataError("minimum exceeds maximum")
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)

    @property
    def d(self) -> int:
        return self.minimum.shape[0]

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise DataError(
                f"dimension mismatch: normalizer expects d={self.d}, "
                f"got data with d={x.shape[-1] if x.ndim else 0}"
            )
        span = self.maximum - self.minimum
        # constant features map to 0
        safe = np.where(span > 0, span, 1.0)
        out = (x - self.minimum) / safe
        out[:, span == 0] = 0.0
        return out


def fit_normalizer(train: Dataset) -> Normalizer:
    if train.n_rows == 0:
        raise DataError("cannot fit a normalizer on an empty dataset")
    return Normalizer(train.features.min(axis=0), train.features.max(axis=0))


def apply_normalizer(norm: Normalizer, data: Dataset) -> Dataset:
    return data.with_features(norm.transform(data.features))


@dataclass(frozen=True)
class SplitResult:
    train: Dataset
    validation: Dataset
    test: Dataset
    seed: int


def split(data: Dataset, seed: int) -> SplitResult:
    """Partition a labelled dataset into train / validation / test.

    The test set holds every anomaly plus an equal number of randomly chosen
    normals (all normals if there are fewer normals than anomalies). The
    remaining normals are shuffled and split with ``floor(0.85 n)`` going to
    training and the rest to validation.

    Raises:
        DataError: ``data`` is unlabelled, has no anomalies or no normals, or
            no normals remain for training once the test set is filled.
    """
    if data.labels is None:
        raise DataError("split requires a labelled dataset")
    normal = np.flatnonzero(data.labels == 0)
    anomaly = np.flatnonzero(data.labels == 1)
    if anomaly.size == 0:
        raise DataError("dataset has zero anomalies; the split is degenerate")
    if normal.size == 0:
        raise DataError("dataset has zero normal rows")

    rng = make_rng(seed)
    perm = normal[rng.permutation(normal.size)]
    n_test_normal = min(anomaly.size, normal.size)
    test_normal = perm[:n_test_normal]
    rest = perm[n_test_normal:]
    if rest.size == 0:
        raise DataError("no normals remain for training")
    rest = rest[rng.permutation(rest.size)]
    n_train = int(math.floor(TRAIN_FRACTION * rest.size))
    train_idx = np.sort(rest[:n_train])
    val_idx = np.sort(rest[n_train:])
    test_idx = np.sort(np.concatenate([anomaly, test_normal]))
    return SplitResult(
        train=data.subset(train_idx),
        validation=data.subset(val_idx),
        test=data.subset(test_idx),
        seed=seed,
    )
