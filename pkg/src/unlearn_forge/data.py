"""Datasets and unlearning partitions.

Example identity is the row index in the source dataset; every derived
dataset carries ``ids`` pointing back at those rows.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError
from .nn import make_rng


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = "data"
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InvalidInputError("features must be a 2-D array")
        if self.features.shape[0] != self.labels.shape[0]:
            raise InvalidInputError("features and labels disagree on the row count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise InvalidInputError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(self.features)):
            raise InvalidInputError("features must be finite")
        if self.ids is None:
            self.ids = np.arange(len(self.labels), dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, rows, name: str | None = None) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(
            self.features[rows], self.labels[rows], self.class_count, name or self.name, self.ids[rows]
        )

    def where_labels(self, classes, name: str | None = None) -> "LabeledDataset":
        return self.subset(np.flatnonzero(np.isin(self.labels, list(classes))), name)

    def relabel(self, labels, name: str | None = None) -> "LabeledDataset":
        return LabeledDataset(self.features, labels, self.class_count, name or self.name, self.ids)

    def concat(self, other: "LabeledDataset", name: str | None = None) -> "LabeledDataset":
        return LabeledDataset(
            np.vstack([self.features, other.features]),
            np.concatenate([self.labels, other.labels]),
            max(self.class_count, other.class_count),
            name or self.name,
            np.concatenate([self.ids, other.ids]),
        )


def gaussian_class_means(class_count: int, dim: int, seed: int, scale: float = 1.0) -> np.ndarray:
    return make_rng(seed, "means").normal(0.0, scale, size=(class_count, dim))


def sample_gaussian_classes(
    means: np.ndarray, per_class: int, spread: float, seed: int, stream: str, name: str = "data"
) -> LabeledDataset:
    class_count, dim = means.shape
    rng = make_rng(seed, stream)
    noise = rng.normal(0.0, 1.0, size=(class_count * per_class, dim))
    labels = np.repeat(np.arange(class_count), per_class)
    return LabeledDataset(means[labels] + spread * noise, labels, class_count, name)


def make_synthetic_gaussian(
    class_count: int, dim: int, per_class: int, spread: float, seed: int, mean_scale: float = 1.0
) -> LabeledDataset:
    """Isotropic Gaussian blobs, rows grouped by class; deterministic per seed."""
    if class_count < 2:
        raise InvalidInputError("class_count must be at least 2")
    if per_class < 1:
        raise InvalidInputError("per_class must be at least 1")
    means = gaussian_class_means(class_count, dim, seed, mean_scale)
    return sample_gaussian_classes(means, per_class, spread, seed, "train", "train")


def make_synthetic_benchmark(
    class_count: int,
    dim: int,
    per_class: int,
    spread: float,
    seed: int,
    mean_scale: float = 1.0,
    test_fraction: float = 0.2,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Training blobs plus an independently sampled test set sharing the class means."""
    train = make_synthetic_gaussian(class_count, dim, per_class, spread, seed, mean_scale)
    means = gaussian_class_means(class_count, dim, seed, mean_scale)
    test_per_class = max(1, int(round(test_fraction * per_class)))
    test = sample_gaussian_classes(means, test_per_class, spread, seed, "test", "test")
    return train, test


def load_csv_dataset(path: str | os.PathLike, class_count: int, name: str | None = None) -> LabeledDataset:
    """Parse ``label,f1,...,fd`` rows.  Feature scaling is left to the caller."""
    features: list[list[float]] = []
    labels: list[int] = []
    width = None
    with open(path, newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                label = int(row[0])
            except ValueError:
                raise ParseError(f"label {row[0]!r} is not an integer", row_no) from None
            if not 0 <= label < class_count:
                raise ParseError(f"label {label} outside [0, {class_count})", row_no)
            try:
                values = [float(cell) for cell in row[1:]]
            except ValueError as exc:
                raise ParseError(f"non-numeric feature ({exc})", row_no) from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ParseError(f"expected {width} features, found {len(values)}", row_no)
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite feature", row_no)
            features.append(values)
            labels.append(label)
    arr = np.array(features, dtype=np.float64).reshape(len(labels), width or 0)
    return LabeledDataset(arr, np.array(labels, dtype=np.int64), class_count, name or Path(path).stem)


# --- splits ----------------------------------------------------------------

SPLIT_MODES = ("sample_wise", "class_wise")


@dataclass(frozen=True)
class SplitSpec:
    mode: str
    unlearn_fraction: float = 0.1
    unlearn_classes: tuple[int, ...] = ()
    ood_classes: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "unlearn_classes", tuple(int(c) for c in self.unlearn_classes))
        object.__setattr__(self, "ood_classes", tuple(int(c) for c in self.ood_classes))
        if self.mode not in SPLIT_MODES:
            raise InvalidInputError(f"mode must be one of {SPLIT_MODES}, got {self.mode!r}")
        if set(self.unlearn_classes) & set(self.ood_classes):
            raise InvalidInputError("unlearn_classes and ood_classes must be disjoint")
        if self.mode == "sample_wise" and not 0.0 < self.unlearn_fraction < 1.0:
            raise InvalidInputError("unlearn_fraction must be in (0, 1)")
        if self.mode == "class_wise" and not self.unlearn_classes:
            raise InvalidInputError("class_wise splits need at least one unlearn class")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "unlearn_fraction": self.unlearn_fraction,
            "unlearn_classes": list(self.unlearn_classes),
            "ood_classes": list(self.ood_classes),
            "seed": self.seed,
        }


@dataclass
class UnlearnSplit:
    train_full: LabeledDataset
    retained: LabeledDataset
    unlearned: LabeledDataset
    test: LabeledDataset
    ood_pool: LabeledDataset
    spec: SplitSpec = field(default=None)

    def manifest(self) -> dict:
        return {
            "spec": self.spec.to_dict() if self.spec else None,
            "seed": self.spec.seed if self.spec else None,
            "train_full": self.train_full.ids.tolist(),
            "retained": self.retained.ids.tolist(),
            "unlearned": self.unlearned.ids.tolist(),
            "test": self.test.ids.tolist(),
            "ood_pool": self.ood_pool.ids.tolist(),
        }

    def save_manifest(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=1, sort_keys=True) + "\n")


def split_for_unlearning(data: LabeledDataset, test: LabeledDataset, spec: SplitSpec) -> UnlearnSplit:
    present = set(np.unique(data.labels).tolist())
    for c in spec.unlearn_classes + spec.ood_classes:
        if not 0 <= c < data.class_count:
            raise InvalidInputError(f"class id {c} outside [0, {data.class_count})")
    missing = [c for c in spec.unlearn_classes if c not in present]
    if missing:
        raise InvalidInputError(f"unlearn classes absent from data: {missing}")

    ood_mask = np.isin(data.labels, list(spec.ood_classes))
    train_full = data.subset(np.flatnonzero(~ood_mask), "train_full")
    ood_pool = data.subset(np.flatnonzero(ood_mask), "ood_pool")
    test_known = test.subset(np.flatnonzero(~np.isin(test.labels, list(spec.ood_classes))), "test")

    if spec.mode == "class_wise":
        forget = np.isin(train_full.labels, list(spec.unlearn_classes))
    else:
        n_forget = math.ceil(spec.unlearn_fraction * len(train_full))
        rng = make_rng(spec.seed, "split")
        chosen = rng.choice(len(train_full), size=n_forget, replace=False)
        forget = np.zeros(len(train_full), dtype=bool)
        forget[chosen] = True
    return UnlearnSplit(
        train_full=train_full,
        retained=train_full.subset(np.flatnonzero(~forget), "retained"),
        unlearned=train_full.subset(np.flatnonzero(forget), "unlearned"),
        test=test_known,
        ood_pool=ood_pool,
        spec=spec,
    )
