"""Class-weighted segmentation losses.

``total_loss = weighted_cross_entropy + weighted_dice`` where ``beta`` up-weights
the changed (positive) class in both terms.  Cross-entropy is averaged over
pixels; Dice sums over every pixel in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

DEFAULT_EPSILON = 1e-7


@dataclass(frozen=True)
class LossConfig:
    beta: float = 1.0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")


def _target(p, like: Tensor) -> Tensor:
    arr = p.data if isinstance(p, Tensor) else np.asarray(p)
    if arr.shape != like.shape:
        raise ValueError(f"ground truth {arr.shape} and prediction {like.shape} differ")
    return Tensor(arr, dtype=like.dtype)


def weighted_cross_entropy(p, p_hat: Tensor, beta: float, epsilon: float = DEFAULT_EPSILON) -> Tensor:
    gt = _target(p, p_hat)
    q = T.clip(p_hat, epsilon, 1.0 - epsilon)
    pos = T.mul(gt, T.log(q)) * beta
    neg = T.mul(1.0 - gt, T.log(1.0 - q))
    return -T.mean(pos + neg)


def weighted_dice(p, p_hat: Tensor, beta: float) -> Tensor:
    gt = _target(p, p_hat)
    overlap = T.sum(T.mul(gt, p_hat))
    num = overlap * (2.0 * beta) + 1.0
    den = T.sum(gt) * beta + T.sum(p_hat) * beta + 1.0
    return 1.0 - num / den


def total_loss(p, p_hat: Tensor, beta: float, epsilon: float = DEFAULT_EPSILON) -> Tensor:
    return weighted_cross_entropy(p, p_hat, beta, epsilon) + weighted_dice(p, p_hat, beta)


def balance_beta(labels) -> float:
    """Ratio of unchanged to changed pixels over an iterable of label masks
    (or sample pairs)."""
    pos = neg = 0
    for lab in labels:
        arr = np.asarray(getattr(lab, "label", lab))
        n1 = int(np.count_nonzero(arr))
        pos += n1
        neg += arr.size - n1
    if pos == 0 or neg == 0:
        raise ValueError(
            f"cannot balance classes with {pos} changed and {neg} unchanged pixels; set beta manually"
        )
    return neg / pos
