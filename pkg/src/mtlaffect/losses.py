"""Masked per-task losses and their weighted multi-task sum.

Every loss averages over the unmasked entries of a batch, so frames whose
annotation is missing contribute neither value nor gradient. A batch with
no unmasked entry yields a zero loss flagged as empty instead of NaN.
"""
from __future__ import annotations

import warnings
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .autodiff.tensor import Tensor, _result
from .errors import ConfigError, ConfigWarning, DataError, DimensionError

TASKS = ("V", "A", "EXPR", "AU")
NUM_EXPR = 8
NUM_AU = 12


class LossResult(NamedTuple):
    value: Tensor
    count: int

    @property
    def empty(self) -> bool:
        return self.count == 0


def _zero_loss(pred: Tensor) -> LossResult:
    shape = pred.shape
    return LossResult(_result(np.zeros(()), (pred,), lambda g: (np.zeros(shape),), "empty_loss"), 0)


def _mask(mask, shape, name: str) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != shape:
        raise DimensionError(f"{name}: mask shape {m.shape} != {shape}")
    return m


def mse_loss(pred: Tensor, label, mask=None) -> LossResult:
    """Mean of (label - pred)**2 over unmasked frames."""
    y = np.asarray(label, dtype=np.float64)
    if pred.shape != y.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs label {y.shape}")
    m = _mask(mask, y.shape, "mse_loss")
    count = int(m.sum())
    if count == 0:
        return _zero_loss(pred)
    diff = np.where(m, pred.data - np.where(m, y, 0.0), 0.0)
    value = np.asarray((diff * diff).sum() / count)
    return LossResult(_result(value, (pred,), lambda g: (g * 2.0 * diff / count,), "mse"), count)


def ce_loss(logits: Tensor, label, mask=None) -> LossResult:
    """Softmax cross entropy over the 8 expression classes, averaged over unmasked frames."""
    if logits.ndim != 2 or logits.shape[1] != NUM_EXPR:
        raise DimensionError(f"ce_loss: logits must be (N, {NUM_EXPR}), got {logits.shape}")
    y = np.asarray(label)
    n = logits.shape[0]
    if y.shape != (n,):
        raise DimensionError(f"ce_loss: labels {y.shape} vs {n} frames")
    m = _mask(mask, (n,), "ce_loss")
    yi = np.where(m, y, 0).astype(np.int64)
    if m.any() and (np.any(yi[m] < 0) or np.any(yi[m] >= NUM_EXPR) or np.any(y[m] != yi[m])):
        raise DataError(f"ce_loss: expression labels must be integers in 0..{NUM_EXPR - 1}")
    count = int(m.sum())
    if count == 0:
        return _zero_loss(logits)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    value = np.asarray(-(logp[rows, yi] * m).sum() / count)
    p = np.exp(logp)
    p[rows, yi] -= 1.0
    grad = p * (m[:, None] / count)
    return LossResult(_result(value, (logits,), lambda g: (g * grad,), "ce"), count)


def bce_loss(logits: Tensor, labels, mask=None) -> LossResult:
    """Binary cross entropy on logits, averaged over unmasked (frame, AU) pairs."""
    y = np.asarray(labels, dtype=np.float64)
    if logits.shape != y.shape:
        raise DimensionError(f"bce_loss: logits {logits.shape} vs labels {y.shape}")
    m = _mask(mask, y.shape, "bce_loss")
    if m.any() and not np.isin(y[m], (0.0, 1.0)).all():
        raise DataError("bce_loss: AU labels must be 0 or 1 where unmasked")
    count = int(m.sum())
    if count == 0:
        return _zero_loss(logits)
    z = logits.data
    yy = np.where(m, y, 0.0)
    per = np.maximum(z, 0.0) - z * yy + np.log1p(np.exp(-np.abs(z)))
    value = np.asarray((per * m).sum() / count)
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    grad = (sig - yy) * (m / count)
    return LossResult(_result(value, (logits,), lambda g: (g * grad,), "bce"), count)


def multi_task_loss(per_task: Mapping[str, LossResult | Tensor], weights: Mapping[str, float],
                    tasks: Sequence[str]) -> Tensor:
    """Sum over ``tasks`` of weight * loss; tasks outside the set are ignored."""
    total: Tensor | None = None
    if tasks and all(float(weights.get(t, 1.0)) == 0.0 for t in tasks):
        warnings.warn("all loss weights of the configured tasks are zero", ConfigWarning, stacklevel=2)
    for t in tasks:
        if t not in per_task:
            raise ConfigError(f"task {t!r} is configured but has no loss")
        term = per_task[t]
        value = term.value if isinstance(term, LossResult) else term
        w = float(weights.get(t, 1.0))
        if w < 0:
            raise ConfigError(f"loss weight for {t} must be nonnegative, got {w}")
        scaled = value * w
        total = scaled if total is None else total + scaled
    if total is None:
        raise ConfigError("multi_task_loss needs at least one task")
    return total
