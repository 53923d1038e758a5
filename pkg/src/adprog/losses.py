"""Training objectives and binary-classification metrics.

All loss functions accept Tensors (differentiable) or raw arrays and return
a scalar Tensor.  Probabilities are clamped to [1e-12, 1] before any log so
losses stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, InputError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class FocalLossConfig:
    """Balancing factor alpha and focusing exponent gamma."""

    alpha: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if self.gamma < 0:
            raise ConfigurationError(f"gamma must be >= 0, got {self.gamma}")


@dataclass
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class BinaryMetrics:
    """Accuracy, precision, recall, F1; undefined ratios are None, never NaN."""

    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None


def _check_distribution(probs: np.ndarray, onehot: np.ndarray) -> None:
    if probs.shape != onehot.shape:
        raise InputError(
            f"probs shape {probs.shape} != onehot shape {onehot.shape}"
        )
    if abs(probs.sum() - 1.0) > 1e-9:
        raise InputError(f"probabilities sum to {probs.sum()!r}, expected 1")
    ones = onehot == 1.0
    if ones.sum() != 1 or not np.all((onehot == 0.0) | ones):
        raise InputError("onehot must have exactly one 1 and zeros elsewhere")


def cross_entropy(probs, onehot) -> T.Tensor:
    """-sum(y * log(p)) over classes."""
    probs = probs if isinstance(probs, T.Tensor) else T.Tensor(probs)
    y = onehot.data if isinstance(onehot, T.Tensor) else np.asarray(onehot, dtype=float)
    _check_distribution(probs.data, y)
    safe = T.clip(probs, PROB_FLOOR, 1.0)
    return -(T.Tensor(y) * T.log(safe)).sum()


def focal_loss(probs, onehot, cfg: FocalLossConfig = FocalLossConfig()) -> T.Tensor:
    """-sum(alpha * y * (1-p)^gamma * log(p)); reduces to cross-entropy at gamma=0."""
    probs = probs if isinstance(probs, T.Tensor) else T.Tensor(probs)
    y = onehot.data if isinstance(onehot, T.Tensor) else np.asarray(onehot, dtype=float)
    _check_distribution(probs.data, y)
    safe = T.clip(probs, PROB_FLOOR, 1.0)
    modulator = T.pow_const(1.0 - safe, cfg.gamma) if cfg.gamma != 0 else T.Tensor(np.ones_like(y))
    return -(T.Tensor(y * cfg.alpha) * modulator * T.log(safe)).sum()


def bce_loss(p, y) -> T.Tensor:
    """-[y log p + (1-y) log(1-p)] for a single probability p and label y."""
    p = p if isinstance(p, T.Tensor) else T.Tensor(p)
    yv = float(y)
    safe_p = T.clip(p, PROB_FLOOR, 1.0)
    safe_q = T.clip(1.0 - p, PROB_FLOOR, 1.0)
    return -(yv * T.log(safe_p) + (1.0 - yv) * T.log(safe_q)).sum()


# Batched objectives used by the trainer: logits [B,1], labels array [B].

def focal_from_logits(logits: T.Tensor, labels: np.ndarray,
                      cfg: FocalLossConfig = FocalLossConfig()) -> T.Tensor:
    p = T.sigmoid(logits)
    y = np.asarray(labels, dtype=float).reshape(p.data.shape)
    p_true = T.Tensor(y) * p + T.Tensor(1.0 - y) * (1.0 - p)
    safe = T.clip(p_true, PROB_FLOOR, 1.0)
    return -(cfg.alpha * T.pow_const(1.0 - safe, cfg.gamma) * T.log(safe)).mean()


def bce_from_logits(logits: T.Tensor, labels: np.ndarray) -> T.Tensor:
    p = T.sigmoid(logits)
    y = np.asarray(labels, dtype=float).reshape(p.data.shape)
    p_true = T.Tensor(y) * p + T.Tensor(1.0 - y) * (1.0 - p)
    safe = T.clip(p_true, PROB_FLOOR, 1.0)
    return -T.log(safe).mean()


def ce_from_logits(logits: T.Tensor, labels: np.ndarray) -> T.Tensor:
    """Mean categorical cross-entropy for [B,C] logits and integer labels."""
    probs = T.softmax(logits, axis=1)
    onehot = np.zeros(probs.data.shape)
    onehot[np.arange(len(labels)), np.asarray(labels, dtype=int)] = 1.0
    safe = T.clip(probs, PROB_FLOOR, 1.0)
    per_sample = -(T.Tensor(onehot) * T.log(safe)).sum(axis=1)
    return per_sample.mean()


def confusion_and_metrics(predictions, labels) -> tuple[ConfusionMatrix, BinaryMetrics]:
    """Confusion counts and the four ratio metrics; positive class is 1."""
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise InputError(
            f"got {len(predictions)} predictions for {len(labels)} labels"
        )
    if not predictions:
        raise InputError("cannot score an empty prediction set")
    cm = ConfusionMatrix()
    for pred, lab in zip(predictions, labels):
        if pred not in (0, 1) or lab not in (0, 1):
            raise InputError(f"labels must be 0/1, got pred={pred} label={lab}")
        if lab == 1:
            if pred == 1:
                cm.tp += 1
            else:
                cm.fn += 1
        else:
            if pred == 1:
                cm.fp += 1
            else:
                cm.tn += 1

    accuracy = (cm.tp + cm.tn) / cm.total
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else None
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return cm, BinaryMetrics(accuracy, precision, recall, f1)


def format_metric(value: float | None, digits: int = 6) -> str:
    return "undefined" if value is None else f"{value:.{digits}f}"
