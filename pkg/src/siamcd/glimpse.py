"""Gaussian attention glimpses.

A glimpse filters an image with two row-stochastic Gaussian matrices, one per
spatial axis: ``g = A_y @ I @ A_x.T`` for every channel.  Each mask row holds
one discretized Gaussian; successive rows shift the center by ``d`` pixels.
The parameters are fixed, so glimpses are applied to the dataset offline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

UNDERFLOW = 1e-12


@dataclass(frozen=True)
class GlimpseParams:
    u: float = 0.1
    s: float = 0.5
    d: float = 2.0
    rows: int = 1
    cols: int = 1

    def __post_init__(self):
        if not 0 <= self.u < 1:
            raise ValueError(f"u must lie in [0, 1), got {self.u}")
        if self.s <= 0 or self.d <= 0:
            raise ValueError("s and d must be positive")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("mask dimensions must be at least 1")

    def with_shape(self, rows: int, cols: int) -> "GlimpseParams":
        return GlimpseParams(self.u, self.s, self.d, rows, cols)


@dataclass(frozen=True)
class AttentionMask:
    values: np.ndarray
    params: GlimpseParams

    @property
    def shape(self):
        return self.values.shape


def centers(params: GlimpseParams) -> np.ndarray:
    """Row centers in pixels: ``u`` is a fraction of the axis, ``d`` a pixel step."""
    return params.u * (params.cols - 1) + np.arange(params.rows) * params.d


def gaussian_mask(params: GlimpseParams) -> AttentionMask:
    x = np.arange(params.cols, dtype=np.float64)
    mu = centers(params)[:, None]
    rows = np.exp(-((x[None, :] - mu) ** 2) / (2.0 * params.s**2))
    totals = rows.sum(axis=1, keepdims=True)
    dead = totals[:, 0] < UNDERFLOW
    rows[~dead] /= totals[~dead]
    rows[dead] = 1.0 / params.cols
    return AttentionMask(rows, params)


def _mask_array(mask) -> np.ndarray:
    return mask.values if isinstance(mask, AttentionMask) else np.asarray(mask, dtype=np.float64)


def apply_glimpse(image, a_y, a_x) -> Tensor:
    """Apply ``A_y I A_x^T`` per channel of a ``[C, H, W]`` image."""
    img = T.as_tensor(image)
    if img.ndim != 3:
        raise ValueError(f"expected a [C, H, W] image, got {img.shape}")
    ay = Tensor(_mask_array(a_y), dtype=img.dtype)
    ax_t = T.transpose(Tensor(_mask_array(a_x), dtype=img.dtype))
    _, h, w = img.shape
    if ay.shape[1] != h or ax_t.shape[0] != w:
        raise ValueError(f"mask columns {ay.shape[1]}x{ax_t.shape[0]} do not match image {h}x{w}")
    channels = []
    for c in range(img.shape[0]):
        plane = T.reshape(T.slice_axis(img, c, c + 1, axis=0), (h, w))
        g = T.matmul(T.matmul(ay, plane), ax_t)
        channels.append(T.reshape(g, (1, *g.shape)))
    return T.concat(channels, axis=0)


def masks_for(params: GlimpseParams, height: int, width: int) -> tuple:
    """Full-size masks ``(A_y, A_x)`` for an ``height x width`` image."""
    return gaussian_mask(params.with_shape(height, height)), gaussian_mask(params.with_shape(width, width))


def preprocess_pair(pair, params: GlimpseParams):
    """Glimpse both images of a pair with identical masks; the label is kept."""
    from .data import SamplePair

    if pair.t1.shape != pair.t2.shape:
        raise ValueError(f"{pair.id}: t1 {pair.t1.shape} and t2 {pair.t2.shape} differ")
    _, h, w = pair.t1.shape
    a_y, a_x = masks_for(params, h, w)
    dtype = pair.t1.dtype
    t1 = apply_glimpse(Tensor(pair.t1, dtype=np.float64), a_y, a_x).data.astype(dtype)
    t2 = apply_glimpse(Tensor(pair.t2, dtype=np.float64), a_y, a_x).data.astype(dtype)
    return SamplePair(t1, t2, pair.label, pair.id, dict(pair.meta))
