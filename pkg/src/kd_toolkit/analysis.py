"""Evaluation metrics: accuracy, genetic errors, and the top-2 gap curve."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .soft_targets import argmax_rows, softmax_tau

DEFAULT_THRESHOLDS = tuple(np.round(np.linspace(0.05, 1.0, 20), 10))


def _aligned(*arrays):
    n = {len(a) for a in arrays}
    if len(n) != 1:
        raise ValueError(f"inputs are not aligned: lengths {sorted(n)}")


def accuracy(student_logits, labels) -> float:
    s = np.atleast_2d(np.asarray(student_logits))
    y = np.asarray(labels)
    _aligned(s, y)
    if len(y) == 0:
        return float("nan")
    return float((argmax_rows(s) == y).mean())


def genetic_errors(student_logits, teacher_logits, labels) -> tuple[int, int, float]:
    """Count student errors, and those that repeat the teacher's prediction.

    Returns ``(genetic, total, ratio)``; ratio is 0 when there are no errors.
    """
    s = np.atleast_2d(np.asarray(student_logits))
    t = np.atleast_2d(np.asarray(teacher_logits))
    y = np.asarray(labels)
    _aligned(s, t, y)
    sp = argmax_rows(s)
    wrong = sp != y
    total = int(wrong.sum())
    genetic = int((wrong & (sp == argmax_rows(t))).sum())
    return genetic, total, genetic / total if total else 0.0


def top2_gaps(student_logits) -> np.ndarray:
    p = softmax_tau(student_logits, 1.0)
    part = -np.partition(-p, 1, axis=1)
    return part[:, 0] - part[:, 1]


def top2_gap_curve(student_logits, thresholds=DEFAULT_THRESHOLDS) -> list[tuple[float, int]]:
    """For each threshold, how many samples have top-1 minus top-2 probability below it."""
    s = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    if s.shape[1] < 2:
        raise ValueError("need at least 2 classes")
    th = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(th) < 0):
        raise ValueError("thresholds must be sorted ascending")
    gaps = np.sort(top2_gaps(s))
    counts = np.searchsorted(gaps, th, side="left")
    return [(float(a), int(c)) for a, c in zip(th, counts)]


@dataclass
class EvalReport:
    accuracy: float
    total_errors: int
    genetic_errors: int
    genetic_ratio: float
    top2_curve: list[tuple[float, int]] = field(default_factory=list)
    n: int = 0

    @property
    def genetic_summary(self) -> str:
        return f"{self.genetic_errors}/{self.total_errors} = {100 * self.genetic_ratio:.2f}%"

    def summary(self) -> str:
        return "\n".join([
            f"samples         {self.n}",
            f"accuracy        {100 * self.accuracy:.2f}",
            f"genetic/total   {self.genetic_summary}",
        ])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "accuracy", "total_errors", "genetic_errors", "genetic_ratio", "genetic_summary"])
            w.writerow([self.n, repr(self.accuracy), self.total_errors, self.genetic_errors,
                        repr(self.genetic_ratio), self.genetic_summary])

    def curve_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "count"])
            for th, c in self.top2_curve:
                w.writerow([repr(th), c])


def evaluate_logits(student_logits, teacher_logits, labels, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    g, t, r = genetic_errors(student_logits, teacher_logits, labels)
    return EvalReport(accuracy(student_logits, labels), t, g, r,
                      top2_gap_curve(student_logits, thresholds), len(labels))
