"""Knowledge adjustment: repair teacher targets the teacher got wrong.

A sample is *misjudged* when the teacher's argmax differs from its label.
Misjudged soft targets are either replaced by a smoothed label (``"lsr"``) or
have the predicted and true entries swapped (``"ps"``, probability shift).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .soft_targets import argmax_rows, as_labels

DEFAULT_EPSILON = 0.985


@dataclass(frozen=True)
class AdjustmentMode:
    """Which repair to apply. ``variant`` is ``None``, ``"lsr"`` or ``"ps"``."""

    variant: str | None = None
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.variant not in (None, "lsr", "ps"):
            raise ValueError(f"unknown adjustment variant {self.variant!r}")
        if self.variant == "lsr" and not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie strictly inside (0, 1), got {self.epsilon}")

    @classmethod
    def parse(cls, name: str | None, epsilon: float = DEFAULT_EPSILON) -> "AdjustmentMode":
        if name is None or str(name).lower() in ("", "none"):
            return cls(None, epsilon)
        return cls(str(name).lower(), epsilon)

    def __str__(self):
        if self.variant == "lsr":
            return f"lsr(eps={self.epsilon:g})"
        return self.variant or "none"


@dataclass
class AdjustmentReport:
    mode: AdjustmentMode
    misjudged_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    teacher_argmax: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ground_truth: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def misjudged_count(self) -> int:
        return int(len(self.misjudged_ids))

    def to_csv(self, path) -> None:
        """Write one ``sample_id,teacher_argmax,ground_truth`` row per misjudged sample."""
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "teacher_argmax", "ground_truth"])
            for row in zip(self.misjudged_ids, self.teacher_argmax, self.ground_truth):
                w.writerow([int(x) for x in row])


def find_misjudged(teacher, y, sample_ids=None, mode: AdjustmentMode | None = None):
    """Flag rows whose argmax differs from the label.

    ``teacher`` may be raw logits or softened targets at any temperature; the
    mask is the same either way since softmax keeps the argmax.

    Returns
    -------
    mask : ndarray of bool, shape (N,)
    report : AdjustmentReport
    """
    q = np.atleast_2d(np.asarray(teacher, dtype=np.float64))
    labels = as_labels(y, *q.shape)
    pred = argmax_rows(q)
    mask = pred != labels
    ids = np.arange(q.shape[0]) if sample_ids is None else np.asarray(sample_ids)
    if ids.shape != (q.shape[0],):
        raise ValueError("sample_ids must align with the batch")
    report = AdjustmentReport(
        mode=mode or AdjustmentMode(),
        misjudged_ids=ids[mask].astype(np.int64),
        teacher_argmax=pred[mask],
        ground_truth=labels[mask],
    )
    return mask, report


def lsr_row(label: int, k: int, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Smoothed one-hot label ``(1 - eps) * onehot(label) + eps / K``."""
    row = np.full(k, epsilon / k)
    row[label] += 1.0 - epsilon
    return row


def adjust_lsr(q_tau, y, mask, epsilon: float = DEFAULT_EPSILON, k: int | None = None) -> np.ndarray:
    """Replace masked rows of already-softened targets with the smoothed label."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie strictly inside (0, 1), got {epsilon}")
    q = np.atleast_2d(np.asarray(q_tau, dtype=np.float64))
    n, kk = q.shape
    if k is not None and k != kk:
        raise ValueError(f"K={k} does not match target width {kk}")
    labels = as_labels(y, n, kk)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ValueError("mask must align with the batch")
    out = q.copy()
    rows = np.flatnonzero(mask)
    out[rows] = epsilon / kk
    out[rows, labels[rows]] += 1.0 - epsilon
    return out


def ps_positions(q, y, mask) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows and column pairs exchanged by probability shift."""
    q = np.atleast_2d(q)
    rows = np.flatnonzero(np.asarray(mask, dtype=bool))
    return rows, argmax_rows(q)[rows], np.asarray(y)[rows]


def adjust_ps(q_tau, y, mask) -> np.ndarray:
    """Swap the teacher's predicted-max entry with the true-class entry on masked rows.

    The row keeps its values (it is permuted), so its sum is unchanged. When
    the maximum is tied, the lowest-index maximum is swapped.
    """
    q = np.atleast_2d(np.asarray(q_tau, dtype=np.float64))
    n, k = q.shape
    labels = as_labels(y, n, k)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ValueError("mask must align with the batch")
    out = q.copy()
    rows, pred, true = ps_positions(q, labels, mask)
    out[rows, pred] = q[rows, true]
    out[rows, true] = q[rows, pred]
    return out


def adjust(q_tau, y, mode: AdjustmentMode, mask=None, sample_ids=None):
    """Apply ``mode`` to softened targets.

    ``mask`` may be supplied when it is already known (it depends only on the
    teacher, not on the temperature); otherwise it is computed from ``q_tau``.

    Returns the adjusted targets and an :class:`AdjustmentReport`.
    """
    q = np.atleast_2d(np.asarray(q_tau, dtype=np.float64))
    found, report = find_misjudged(q, y, sample_ids, mode)
    if mask is None:
        mask = found
    else:
        mask = np.asarray(mask, dtype=bool)
        ids = np.arange(q.shape[0]) if sample_ids is None else np.asarray(sample_ids)
        report = AdjustmentReport(mode, ids[mask].astype(np.int64),
                                  argmax_rows(q)[mask], np.asarray(y)[mask].astype(np.int64))
    if mode.variant is None:
        return q, report
    if mode.variant == "lsr":
        return adjust_lsr(q, y, mask, mode.epsilon), report
    return adjust_ps(q, y, mask), report
