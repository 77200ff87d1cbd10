"""Core data types and CSV interchange.

One CSV file holds one domain (subject): a header row ``f0,...,f{d-1},y``
followed by one row per epoch.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ALGORITHMS = ("BL1", "BL2", "DAMF", "OwARR", "OwARR_SDS")


class DataError(ValueError):
    """Raised when input data violates a dataset invariant."""


@dataclass(frozen=True)
class DomainDataset:
    """Feature matrix and labels of one domain.

    Arrays are copied and made read-only on construction, so a dataset can be
    shared between workers without defensive copies.
    """

    id: str
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.labels, dtype=np.float64, copy=True).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DataError(f"{self.id}: features must be a 2-D matrix")
        if X.shape[0] != y.shape[0]:
            raise DataError(
                f"{self.id}: {X.shape[0]} feature rows but {y.shape[0]} labels"
            )
        if X.shape[0] == 0:
            raise DataError(f"{self.id}: no epochs")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError(f"{self.id}: NaN or Inf entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n_epochs(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index, id: str | None = None) -> "DomainDataset":
        """New dataset holding the rows selected by ``index``."""
        index = np.asarray(index)
        return DomainDataset(id or self.id, self.features[index], self.labels[index])

    def with_features(self, features, id: str | None = None) -> "DomainDataset":
        return DomainDataset(id or self.id, features, self.labels)


@dataclass(frozen=True)
class Hyperparams:
    sigma: float = 0.2
    lam: float = 10.0
    gamma: float = 0.5
    ridge: float = 0.01
    num_fuzzy_sets: int = 3
    kmeans_k: int = 2

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be non-negative")
        if not self.ridge > 0:
            raise ValueError("ridge must be positive")
        if self.num_fuzzy_sets < 0 or self.num_fuzzy_sets == 1:
            raise ValueError("num_fuzzy_sets must be 0 or at least 2")
        if self.kmeans_k < 2:
            raise ValueError("kmeans_k must be at least 2")


@dataclass(frozen=True)
class ExperimentRecord:
    subject_id: str
    algorithm: str
    m: int
    repetition: int
    rmse: float
    cc: float
    train_seconds: float
    n_sources: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not math.isfinite(self.rmse) or self.rmse < 0:
            raise ValueError("rmse must be finite and non-negative")

    @property
    def cc_defined(self) -> bool:
        return math.isfinite(self.cc)

    def as_row(self) -> dict:
        row = {
            "subject_id": self.subject_id,
            "algorithm": self.algorithm,
            "m": self.m,
            "repetition": self.repetition,
            "rmse": repr(float(self.rmse)),
            "cc": repr(float(self.cc)) if self.cc_defined else "nan",
            "train_seconds": repr(float(self.train_seconds)),
            "n_sources": self.n_sources,
        }
        row.update(self.extra)
        return row


RECORD_FIELDS = [
    "subject_id",
    "algorithm",
    "m",
    "repetition",
    "rmse",
    "cc",
    "train_seconds",
    "n_sources",
]


def validate_labels(dataset: DomainDataset) -> None:
    """Check that labels are drowsiness indices in [0, 1]."""
    y = dataset.labels
    if np.any(y < 0) or np.any(y > 1):
        raise DataError(f"{dataset.id}: label outside [0, 1]")


def check_compatible(datasets) -> int:
    """Return the shared feature dimension or raise."""
    dims = {ds.dim for ds in datasets}
    if len(dims) != 1:
        raise DataError(f"feature dimensions differ across datasets: {sorted(dims)}")
    return dims.pop()


def load_dataset(path, id: str | None = None, label_column: str = "y",
                 drowsiness_labels: bool = True) -> DomainDataset:
    """Read one domain from a CSV file with a header row.

    Every column other than ``label_column`` is a feature, in file order.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: no epochs") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not found")
        label_idx = header.index(label_column)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: ragged row ({len(row)} cells)")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric cell") from None
    if not rows:
        raise DataError(f"{path}: no epochs")
    table = np.array(rows, dtype=np.float64)
    y = table[:, label_idx]
    X = np.delete(table, label_idx, axis=1)
    ds = DomainDataset(id or path.stem, X, y)
    if drowsiness_labels:
        validate_labels(ds)
    return ds


def save_dataset(dataset: DomainDataset, path) -> Path:
    """Write ``dataset`` as CSV with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"f{j}" for j in range(dataset.dim)] + ["y"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([f"{v:.17g}" for v in x] + [f"{y:.17g}"])
    return path
