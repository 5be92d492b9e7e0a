"""Evaluation metrics, rank-based and from scratch.

ROC-AUC uses the Mann-Whitney statistic with average ranks on ties.
Average precision is the sum of (recall step) x (precision at that rank)
over the descending-score list, i.e. the mean of precisions at the
positives; no interpolation.  Tied scores keep their input order (stable
sort), which makes every value deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError, UndefinedMetricError


def _checked_pair(name: str, a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(name, a.shape, b.shape)
    if a.size == 0:
        raise ContractError(f"{name}: empty input")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name}: non-finite scores")
    return a, b


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, tied values sharing the mean of their positions."""
    order = np.argsort(scores, kind="mergesort")
    _, inverse, counts = np.unique(scores[order], return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    mean_rank = (starts + 1 + ends) / 2.0
    ranks = np.empty(scores.size, dtype=np.float64)
    ranks[order] = mean_rank[inverse]
    return ranks


def roc_auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative (ties 1/2)."""
    scores, labels = _checked_pair("roc_auc", scores, labels)
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ContractError("roc_auc: labels must be 0/1")
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise UndefinedMetricError(f"roc_auc: needs both classes, got {pos} positives of {labels.size}")
    ranks = _average_ranks(scores)
    return float((ranks[labels == 1.0].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def average_precision(scores, labels, mask=None) -> tuple[np.ndarray, float]:
    """(per-task AP, mean over valid tasks).

    Accepts (N,) single-task or (N, K) multi-task arrays; `mask` selects
    observed entries.  A task with no observed positives gets NaN and is
    excluded from the mean; no valid task at all is an error.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ShapeError("average_precision", scores.shape, labels.shape)
    if scores.ndim == 1:
        scores = scores[:, None]
        labels = labels[:, None]
    elif scores.ndim != 2:
        raise ShapeError("average_precision", scores.shape)
    if scores.size == 0:
        raise ContractError("average_precision: empty input")
    if mask is None:
        mask = ~np.isnan(labels)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 1:
            mask = mask[:, None]
        if mask.shape != scores.shape:
            raise ShapeError("average_precision mask", mask.shape, scores.shape)

    per_task = np.full(scores.shape[1], np.nan)
    for k in range(scores.shape[1]):
        sel = mask[:, k]
        s, y = scores[sel, k], labels[sel, k]
        if s.size == 0 or not np.all(np.isfinite(s)):
            if s.size and not np.all(np.isfinite(s)):
                raise ContractError("average_precision: non-finite scores")
            continue
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ContractError("average_precision: observed labels must be 0/1")
        order = np.argsort(-s, kind="mergesort")
        y_sorted = y[order]
        pos = y_sorted.sum()
        if pos == 0:
            continue
        precision = np.cumsum(y_sorted) / np.arange(1, y_sorted.size + 1)
        per_task[k] = precision[y_sorted == 1.0].sum() / pos
    valid = ~np.isnan(per_task)
    if not valid.any():
        raise UndefinedMetricError("average_precision: no task has an observed positive")
    return per_task, float(per_task[valid].mean())


def mae(preds, targets) -> float:
    preds, targets = _checked_pair("mae", preds, targets)
    return float(np.mean(np.abs(preds - targets)))


def accuracy(scores, labels, threshold: float = 0.0) -> float:
    """Fraction of correct hard decisions; scores are logits, cut at 0."""
    scores, labels = _checked_pair("accuracy", scores, labels)
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ContractError("accuracy: labels must be 0/1")
    return float(np.mean((scores > threshold).astype(np.float64) == labels))


@dataclass(frozen=True)
class EvalReport:
    metric: str
    value: float
    n_samples: int
    per_task: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.metric in ("roc_auc", "ap", "accuracy") and not (0.0 <= self.value <= 1.0):
            raise ContractError(f"{self.metric} out of [0,1]: {self.value}")
        if self.metric == "mae" and self.value < 0.0:
            raise ContractError(f"mae must be >= 0, got {self.value}")

    def to_dict(self) -> dict:
        per_task = None
        if self.per_task is not None:
            per_task = [None if math.isnan(v) else v for v in self.per_task]
        return {
            "metric": self.metric,
            "value": self.value,
            "n_samples": self.n_samples,
            "per_task": per_task,
        }
