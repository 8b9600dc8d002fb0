"""Central-difference gradient checking against the autodiff tape."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, zero_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    worst: tuple | None = None  # (input index, flat element index)

    def __bool__(self):
        return self.passed


def relative_error(a, b, floor: float = 1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_gradient(f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> list:
    grads = []
    for t in inputs:
        flat = t.data.reshape(-1)
        g = np.zeros(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(*inputs).data)
            flat[i] = orig - h
            fm = float(f(*inputs).data)
            flat[i] = orig
            g[i] = (fp - fm) / (2 * h)
        grads.append(g.reshape(t.shape))
    return grads


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare autodiff gradients of scalar ``f(*inputs)`` with central
    differences, element by element.  Inputs must be 64-bit tensors; their
    ``.grad`` holds the autodiff gradient afterwards."""
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        t.requires_grad = True
    zero_grad(inputs)
    backward(f(*inputs))
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad for t in inputs]
    zero_grad(inputs)
    numeric = numerical_gradient(f, inputs, h)
    for t, a in zip(inputs, analytic):
        t.grad = a

    worst, worst_at = 0.0, None
    for k, (a, n) in enumerate(zip(analytic, numeric)):
        err = relative_error(a, n)
        if err.size and err.max() > worst:
            worst = float(err.max())
            worst_at = (k, int(err.argmax()))
    return GradCheckReport(worst, worst < tol, worst_at)
