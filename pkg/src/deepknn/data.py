"""Datasets, CSV ingestion and deterministic clean/noisy splitting."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Base class for dataset construction and parsing failures."""


class MissingFileError(DataError, FileNotFoundError):
    pass


class RaggedRowError(DataError):
    pass


class NonNumericCellError(DataError):
    def __init__(self, row: int, column: int, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column}: cannot parse {value!r} as a finite number")


class NegativeLabelError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus integer labels in ``[0, num_classes)``.

    Arrays are copied and frozen on construction.  Empty datasets are allowed
    so that splits with a zero fraction stay representable.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        if y.ndim != 1 or len(y) != len(X):
            raise DataError(f"labels shape {y.shape} does not match {len(X)} rows")
        if X.shape[1] < 1:
            raise DataError("features need at least one column")
        if len(y) and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise DataError("labels must be integers")
        y = y.astype(np.int64)
        if self.num_classes < 1:
            raise DataError("num_classes must be positive")
        if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain NaN or Inf")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "num_classes", int(self.num_classes))

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.num_classes)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    @classmethod
    def empty(cls, dim: int, num_classes: int) -> "Dataset":
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), num_classes)


@dataclass(frozen=True)
class SplitSpec:
    clean_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.clean_fraction <= 1.0:
            raise ValueError(f"clean_fraction must be in [0, 1], got {self.clean_fraction}")


def concat(*datasets: Dataset) -> Dataset:
    """Row-wise concatenation; the class count is the largest among the parts."""
    if not datasets:
        raise DataError("nothing to concatenate")
    dims = {d.dim for d in datasets}
    if len(dims) != 1:
        raise DataError(f"feature dimensions differ: {sorted(dims)}")
    return Dataset(
        np.concatenate([d.features for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
        max(d.num_classes for d in datasets),
    )


def round_half_up(x: float) -> int:
    # tolerate representation error such as 0.05 * 100 = 5.000000000000001
    return int(math.floor(x + 0.5 + 1e-9))


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded partition of ``range(n)`` into sorted index arrays of sizes
    ``round_half_up(fraction * n)`` and the remainder."""
    order = np.random.default_rng(seed).permutation(n)
    m = round_half_up(fraction * n)
    return np.sort(order[:m]), np.sort(order[m:])


def split_clean_noisy(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    clean_idx, noisy_idx = split_indices(data.n, spec.clean_fraction, spec.seed)
    return data.subset(clean_idx), data.subset(noisy_idx)


def subsplit(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if data.n < 2:
        raise DataError(f"need at least 2 examples to subsplit, got {data.n}")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    a, b = split_indices(data.n, fraction, seed)
    return data.subset(a), data.subset(b)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data: Dataset) -> "Standardizer":
        mean = data.features.mean(axis=0)
        scale = data.features.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    def apply(self, data: Dataset) -> Dataset:
        return Dataset((data.features - self.mean) / self.scale, data.labels, data.num_classes)


def _parse_float(cell: str, row: int, column: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise NonNumericCellError(row, column, cell) from None
    if not math.isfinite(value):
        raise NonNumericCellError(row, column, cell)
    return value


def _looks_like_header(cells: Sequence[str]) -> bool:
    for cell in cells:
        try:
            float(cell)
        except ValueError:
            return True
    return False


def load_csv(
    path,
    label_column: int | str = -1,
    *,
    header: bool | None = None,
    num_classes: int | None = None,
) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    ``label_column`` is a column name (requires a header) or an index, negative
    indices counting from the end.  ``header=None`` detects a header row by the
    presence of any non-numeric cell in the first line.  The class count is
    ``1 + max(label)`` unless ``num_classes`` is given.  Reported row numbers
    are 1-based file lines.
    """
    if not os.path.isfile(path):
        raise MissingFileError(f"no such file: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = [(i + 1, line.rstrip("\r\n")) for i, line in enumerate(fh)]
    lines = [(i, line) for i, line in lines if line.strip()]
    if not lines:
        raise DataError(f"{path} contains no rows")

    first = [c.strip() for c in lines[0][1].split(",")]
    if header is None:
        header = _looks_like_header(first)
    names = first if header else None
    rows = lines[1:] if header else lines
    if not rows:
        raise DataError(f"{path} has a header but no data rows")

    width = len(first)
    if isinstance(label_column, str):
        if names is None:
            if label_column.lstrip("-").isdigit():
                label_column = int(label_column)
            else:
                raise DataError(f"label column {label_column!r} given by name but file has no header")
        else:
            if label_column not in names:
                if label_column.lstrip("-").isdigit():
                    label_column = int(label_column)
                else:
                    raise DataError(f"no column named {label_column!r}")
            else:
                label_column = names.index(label_column)
    if not -width <= label_column < width:
        raise DataError(f"label column index {label_column} out of range for {width} columns")
    label_idx = label_column % width

    features, labels = [], []
    for lineno, line in rows:
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != width:
            raise RaggedRowError(f"row {lineno}: expected {width} cells, found {len(cells)}")
        values = [_parse_float(c, lineno, j) for j, c in enumerate(cells)]
        label = values.pop(label_idx)
        if label != int(label):
            raise NonNumericCellError(lineno, label_idx, cells[label_idx])
        if label < 0:
            raise NegativeLabelError(f"row {lineno}: negative label {int(label)}")
        labels.append(int(label))
        features.append(values)

    if width < 2:
        raise DataError("need at least one feature column besides the label")
    k = num_classes if num_classes is not None else 1 + max(labels)
    return Dataset(np.array(features), np.array(labels, dtype=np.int64), k)


def save_csv(data: Dataset, path, header: bool = True) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header:
            cols = [f"x{j}" for j in range(data.dim)] + ["label"]
            fh.write(",".join(cols) + "\n")
        for x, y in zip(data.features, data.labels):
            fh.write(",".join(repr(float(v)) for v in x) + f",{int(y)}\n")


def make_blobs(
    n: int,
    num_classes: int = 10,
    *,
    std: float = 1.0,
    radius: float = 4.0,
    seed: int = 0,
) -> Dataset:
    """Balanced isotropic Gaussian classes in 2-D with means evenly spaced on a
    circle of the given radius."""
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    centers = radius * np.c_[np.cos(angles), np.sin(angles)]
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    X = centers[labels] + std * rng.standard_normal((n, 2))
    return Dataset(X, labels, num_classes)
