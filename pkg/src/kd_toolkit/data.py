"""Datasets: synthetic Gaussian blobs, CSV import, batching, misjudged-sample filtering."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .soft_targets import argmax_rows

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    k: int
    split_tag: str = "train"
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be an (N, D) matrix")
        if len(self.features) != len(self.labels):
            raise ValueError(f"{len(self.features)} feature rows but {len(self.labels)} labels")
        if self.k < 2:
            raise ValueError("need at least 2 classes")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise ValueError(f"label out of range [0, {self.k})")
        if self.ids is None:
            self.ids = np.arange(len(self.labels), dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.features[index], self.labels[index], self.k, self.split_tag, self.ids[index])


def gen_synthetic(n_per_class: int, k: int, d: int, spread: float, seed: int) -> dict[str, Dataset]:
    """Gaussian blobs around random unit-norm centers, split 70/15/15.

    Each class gets its own isotropic per-coordinate noise std, ``spread``
    times a factor drawn uniformly from [0.2, 0.6]; unequal class spreads make
    the Bayes boundary quadratic rather than linear. Features are rounded to float32 so they
    survive the 32-bit file format unchanged.
    """
    if k < 2 or d < 2 or n_per_class < 1:
        raise ValueError(f"invalid dims: k={k}, d={d}, n_per_class={n_per_class}")
    if spread < 0:
        raise ValueError("spread must be >= 0")
    rng = np.random.Generator(np.random.Philox(key=[int(seed), 0xDA7A]))
    centers = rng.normal(size=(k, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    scales = spread * rng.uniform(0.2, 0.6, size=k)
    labels = np.repeat(np.arange(k), n_per_class)
    noise = rng.normal(size=(len(labels), d))
    x = centers[labels] + scales[labels, None] * noise
    x = x.astype(np.float32).astype(np.float64)

    perm = rng.permutation(len(labels))
    n = len(labels)
    n_train, n_val = int(round(0.7 * n)), int(round(0.15 * n))
    parts = {"train": perm[:n_train], "val": perm[n_train:n_train + n_val], "test": perm[n_train + n_val:]}
    return {name: Dataset(x[idx], labels[idx], k, name) for name, idx in parts.items()}


def load_csv_dataset(path, k: int | None = None, split_tag: str = "train") -> Dataset:
    """Read a CSV whose header has D feature columns followed by ``label``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1].strip() != "label":
        raise ValueError(f"{path}: header must end with a 'label' column")
    body = [r for r in rows[1:] if r]
    if not body:
        x, y = np.zeros((0, len(rows[0]) - 1)), np.zeros(0, dtype=np.int64)
    else:
        arr = np.array(body, dtype=np.float64)
        x, y = arr[:, :-1], arr[:, -1]
        if not np.all(y == np.round(y)):
            raise ValueError(f"{path}: labels must be integers")
        y = y.astype(np.int64)
    if k is None:
        k = int(y.max()) + 1 if len(y) else 2
    return Dataset(x, y, max(k, 2), split_tag)


class Batch(NamedTuple):
    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    index: np.ndarray  # row positions in the source dataset


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=[int(seed), int(epoch) + 1]))
    return rng.permutation(n)


def batches(dataset: Dataset, batch_size: int, seed: int, epoch: int) -> Iterator[Batch]:
    """Shuffled minibatches for one epoch; the last short batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = epoch_permutation(len(dataset), seed, epoch)
    for start in range(0, len(perm), batch_size):
        idx = perm[start:start + batch_size]
        yield Batch(dataset.features[idx], dataset.labels[idx], dataset.ids[idx], idx)


def filter_misjudged(dataset: Dataset, teacher_logits) -> tuple[Dataset, int]:
    """Drop samples the teacher misclassifies; returns the kept subset and removed count."""
    t = np.asarray(teacher_logits)
    if t.shape[0] != len(dataset):
        raise ValueError(f"{t.shape[0]} teacher rows for {len(dataset)} samples")
    keep = np.flatnonzero(argmax_rows(t) == dataset.labels) if len(dataset) else np.zeros(0, dtype=np.int64)
    removed = len(dataset) - len(keep)
    if len(keep) == 0 and len(dataset):
        log.warning("teacher misjudges every sample; filtered dataset is empty")
    return dataset.subset(keep), removed
