"""Dataset handling: CSV ingestion, normalization, stratified folds, toy generators."""

from __future__ import annotations

import csv
import hashlib
import io
import warnings
from dataclasses import dataclass, field

import numpy as np


class DataDiagnosticWarning(UserWarning):
    """Non-fatal data irregularity, e.g. a single-class file."""


@dataclass(eq=False)
class LabeledDataset:
    """Binary-labeled inputs kept in canonical order: majority (label 0) block
    first, then minority (label 1).

    ``row_ids`` records the original row position of every sample so the
    reordering stays traceable. Arrays are locked read-only after construction;
    a dataset is safe to share between threads.
    """

    X: np.ndarray
    y: np.ndarray
    row_ids: np.ndarray
    feature_names: tuple[str, ...]
    label_name: str = "label"

    def __post_init__(self):
        self.X = np.array(self.X, dtype=float)
        self.y = np.array(self.y, dtype=int)
        self.row_ids = np.array(self.row_ids, dtype=int)
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n = self.X.shape[0]
        if self.y.shape != (n,) or self.row_ids.shape != (n,):
            raise ValueError("X, y and row_ids must have matching lengths")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("inputs must be finite")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("labels must be 0 or 1")
        if self.y.size and np.any(np.diff(self.y) < 0):
            raise ValueError("dataset is not in canonical majority-then-minority order")
        self.feature_names = tuple(self.feature_names)
        if len(self.feature_names) != self.X.shape[1]:
            raise ValueError("one feature name per column required")
        for a in (self.X, self.y, self.row_ids):
            a.flags.writeable = False

    @classmethod
    def from_arrays(cls, X, y, row_ids=None, feature_names=None, label_name="label"):
        """Build a dataset from unordered arrays, canonicalizing the row order."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y, dtype=int)
        if row_ids is None:
            row_ids = np.arange(len(y))
        if feature_names is None:
            feature_names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
        order = np.argsort(y, kind="stable")
        return cls(X[order], y[order], np.asarray(row_ids)[order], feature_names, label_name)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_majority(self) -> int:
        return int(np.sum(self.y == 0))

    @property
    def n_minority(self) -> int:
        return int(np.sum(self.y == 1))

    @property
    def majority_X(self) -> np.ndarray:
        return self.X[: self.n_majority]

    @property
    def minority_X(self) -> np.ndarray:
        return self.X[self.n_majority :]

    def subset(self, indices) -> "LabeledDataset":
        """Dataset restricted to ``indices`` (canonical order is re-established)."""
        idx = np.asarray(indices, dtype=int)
        return LabeledDataset.from_arrays(
            self.X[idx], self.y[idx], self.row_ids[idx], self.feature_names, self.label_name
        )

    def equals(self, other: "LabeledDataset") -> bool:
        return (
            self.feature_names == other.feature_names
            and self.label_name == other.label_name
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )

    def to_csv_text(self) -> str:
        """Canonical CSV form: header, shortest round-trip floats, 0/1 labels."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(self.feature_names) + [self.label_name])
        for row, label in zip(self.X, self.y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
        return buf.getvalue()

    def checksum(self) -> str:
        return hashlib.sha256(self.to_csv_text().encode("utf-8")).hexdigest()


def load_csv(path, label_column: str = "label") -> LabeledDataset:
    """Read a comma-delimited file with a header row into canonical form.

    Every non-label cell must parse as a float; the label column must contain
    only 0 and 1. Cell-level failures report the offending row and column.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: file is empty, expected a header row")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise ValueError(
                f"{path}: label column {label_column!r} not found; "
                f"available columns: {', '.join(header)}"
            )
        label_idx = header.index(label_column)
        feature_names = tuple(h for i, h in enumerate(header) if i != label_idx)

        rows, labels = [], []
        for r, record in enumerate(reader):
            if not record or (len(record) == 1 and record[0].strip() == ""):
                continue
            if len(record) != len(header):
                raise ValueError(f"{path}: row {r}: expected {len(header)} cells, got {len(record)}")
            feats = []
            for i, cell in enumerate(record):
                cell = cell.strip()
                if i == label_idx:
                    if cell not in ("0", "1"):
                        raise ValueError(
                            f"{path}: row {r}, column {header[i]!r}: "
                            f"label must be 0 or 1, got {cell!r}"
                        )
                    labels.append(int(cell))
                else:
                    try:
                        feats.append(float(cell))
                    except ValueError:
                        raise ValueError(
                            f"{path}: row {r}, column {header[i]!r}: "
                            f"non-numeric value {cell!r}"
                        ) from None
            rows.append(feats)

    if not rows:
        raise ValueError(f"{path}: no data rows after the header")
    y = np.array(labels)
    if len(np.unique(y)) < 2:
        warnings.warn(f"{path}: single-class file", DataDiagnosticWarning, stacklevel=2)
    return LabeledDataset.from_arrays(np.array(rows), y, feature_names=feature_names, label_name=label_column)


def save_csv(data: LabeledDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(data.to_csv_text())


def normalize(data: LabeledDataset) -> tuple[LabeledDataset, float]:
    """Divide all inputs by the maximum Euclidean norm so max ||x||^2 == 1.

    Returns the rescaled dataset and the multiplicative scale (1/max norm).
    An all-zero dataset is returned unchanged with scale 1; so is a dataset
    whose max norm is already within 1e-12 of 1, which makes the operation
    idempotent under floating point.
    """
    norms = np.sqrt(np.sum(data.X**2, axis=1))
    m = float(norms.max()) if data.n else 0.0
    if m == 0.0 or abs(m - 1.0) <= 1e-12:
        return data, 1.0
    scale = 1.0 / m
    scaled = LabeledDataset(
        data.X / m, data.y, data.row_ids, data.feature_names, data.label_name
    )
    return scaled, scale


def stratified_folds(data: LabeledDataset, k: int, seed: int) -> list[np.ndarray]:
    """Split into k disjoint index sets with per-class round-robin assignment.

    Class counts differ across folds by at most one, so the imbalance ratio of
    every fold tracks the global one. Requires k <= min(majority, minority).
    """
    if k < 2:
        raise ValueError("need at least 2 folds")
    if k > min(data.n_majority, data.n_minority):
        raise ValueError(
            f"k={k} exceeds the smaller class size "
            f"(majority {data.n_majority}, minority {data.n_minority})"
        )
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    for class_label in (0, 1):
        idx = np.flatnonzero(data.y == class_label)
        rng.shuffle(idx)
        for f in range(k):
            folds[f].extend(idx[f::k])
    return [np.sort(np.array(f, dtype=int)) for f in folds]


@dataclass(frozen=True)
class GaussianSpec:
    """Multivariate normal sampling recipe (mean, covariance, draw count)."""

    mean: tuple[float, ...]
    cov: tuple[tuple[float, ...], ...]
    count: int

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        L = np.linalg.cholesky(cov)
        z = rng.standard_normal((self.count, mean.size))
        return mean + z @ L.T


_TOY_MAJORITY = GaussianSpec(mean=(-1.0, -2.0), cov=((1.1, 0.1), (0.1, 1.2)), count=100)
_TOY_MINORITY = {
    1: GaussianSpec(mean=(2.0, 1.0), cov=((0.6, -0.1), (-0.1, 1.7)), count=20),
    2: GaussianSpec(mean=(1.0, 1.0), cov=((0.6, -0.1), (-0.1, 1.7)), count=20),
    3: GaussianSpec(mean=(0.0, 0.0), cov=((0.6, -0.1), (-0.1, 1.7)), count=5),
}
_TOY_MAJORITY_KEPT = {1: 50, 2: 50, 3: 70}


def generate_toy(which: int, seed: int) -> LabeledDataset:
    """Generate one of the three built-in 2-d benchmark datasets.

    Majority points are drawn first (100 draws, the first 50 or 70 retained),
    then the minority points, all from one seeded generator, so a fixed seed
    reproduces the dataset exactly.
    """
    if which not in _TOY_MINORITY:
        raise ValueError(f"unknown toy dataset {which}; choose 1, 2 or 3")
    rng = np.random.default_rng(seed)
    majority = _TOY_MAJORITY.sample(rng)[: _TOY_MAJORITY_KEPT[which]]
    minority = _TOY_MINORITY[which].sample(rng)
    X = np.vstack([majority, minority])
    y = np.concatenate([np.zeros(len(majority), dtype=int), np.ones(len(minority), dtype=int)])
    return LabeledDataset.from_arrays(X, y)
