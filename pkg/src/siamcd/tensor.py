"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation records a :class:`Node` on its output holding
the parents and a vector-Jacobian rule.  :func:`backward` walks the recorded
graph once in reverse topological order and deposits gradients on leaves.

Spatial ops (``conv2d``, ``maxpool2d``, ``conv_transpose2d``) take a single
image ``[C, H, W]`` or a batch ``[N, C, H, W]``; the channel axis is always
``-3``.  Binary elementwise ops never broadcast.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "Node",
    "as_tensor",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "absolute",
    "log",
    "exp",
    "scale",
    "add_scalar",
    "clip",
    "relu",
    "sigmoid",
    "activation",
    "matmul",
    "transpose",
    "reshape",
    "sum",
    "mean",
    "concat",
    "slice_axis",
    "repeat_channels",
    "conv2d",
    "maxpool2d",
    "conv_transpose2d",
    "backward",
    "zero_grad",
]


class Node:
    """One recorded operation: parents plus the rule mapping the output
    gradient to a gradient per parent (``None`` where not needed)."""

    __slots__ = ("op", "parents", "vjp")

    def __init__(self, op: str, parents: tuple, vjp: Callable):
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if any(n <= 0 for n in arr.shape):
            raise ValueError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, parents: tuple, vjp: Callable) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out.node = Node(op, parents, vjp) if out.requires_grad else None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, accumulate: bool = False) -> None:
        backward(self, accumulate=accumulate)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _g(p: Tensor, g):
    return g if p.requires_grad else None


# -- elementwise ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor._from_op(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Tensor._from_op(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def vjp(g):
        return _g(a, g * b.data), _g(b, g * a.data)

    return Tensor._from_op(a.data * b.data, "mul", (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    out = a.data / b.data

    def vjp(g):
        return _g(a, g / b.data), _g(b, -g * out / b.data)

    return Tensor._from_op(out, "div", (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, "neg", (a,), lambda g: (-g,))


def absolute(a: Tensor) -> Tensor:
    return Tensor._from_op(np.abs(a.data), "abs", (a,), lambda g: (g * np.sign(a.data),))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log: non-positive input; clamp before taking logs")
    return Tensor._from_op(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, "exp", (a,), lambda g: (g * out,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._from_op(a.data * a.dtype.type(c), "scale", (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return Tensor._from_op(a.data + a.dtype.type(c), "add_scalar", (a,), lambda g: (g,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    out = np.clip(a.data, lo, hi).astype(a.dtype, copy=False)
    return Tensor._from_op(out, "clip", (a,), lambda g: (g * inside,))


_BINARY = {"add": add, "sub": sub, "mul": mul}
_UNARY = {"abs": absolute, "log": log, "negate": neg}


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by name; ``scalar-mul`` takes a Python number as ``b``."""
    if kind in _BINARY:
        if not isinstance(b, Tensor):
            raise TypeError(f"{kind} needs two tensors")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind == "scalar-mul":
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {kind!r}")


# -- activations ---------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(x.data * mask, "relu", (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # expit saturates to exactly 0/1 for large |x|; pin to the open interval
    out = np.asarray(expit(x.data))
    tiny = np.finfo(out.dtype).tiny
    np.clip(out, tiny, np.nextafter(out.dtype.type(1), out.dtype.type(0)), out=out)
    return Tensor._from_op(out, "sigmoid", (x,), lambda g: (g * out * (1 - out),))


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# -- linear algebra and shape --------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")

    def vjp(g):
        return _g(a, g @ b.data.T), _g(b, a.data.T @ g)

    return Tensor._from_op(a.data @ b.data, "matmul", (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError("transpose expects a rank-2 tensor")
    return Tensor._from_op(a.data.T, "transpose", (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.data.reshape(shape)
    return Tensor._from_op(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return Tensor._from_op(
        np.asarray(a.data.sum(), dtype=a.dtype), "sum", (a,),
        lambda g: (np.full(a.shape, g, dtype=a.dtype),),
    )


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return Tensor._from_op(
        np.asarray(a.data.mean(), dtype=a.dtype), "mean", (a,),
        lambda g: (np.full(a.shape, g / n, dtype=a.dtype),),
    )


def concat(tensors: Sequence[Tensor], axis: int = -3) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of an empty list")
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ValueError(f"concat: incompatible shapes {ref.shape} and {t.shape}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def vjp(g):
        parts = np.split(g, bounds, axis=ax)
        return tuple(_g(t, p) for t, p in zip(tensors, parts))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=ax), "concat", tuple(tensors), vjp)


def slice_axis(a: Tensor, start: int, stop: int, axis: int = -3) -> Tensor:
    """``a[..., start:stop, ...]`` along one axis."""
    ax = axis % a.ndim
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    out = a.data[index]
    if out.size == 0:
        raise ValueError("slice_axis: empty slice")

    def vjp(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return Tensor._from_op(out, "slice", (a,), vjp)


def repeat_channels(a: Tensor, count: int) -> Tensor:
    """Tile a single-channel map across ``count`` channels (axis -3)."""
    if a.shape[-3] != 1:
        raise ValueError("repeat_channels expects a single-channel tensor")
    out = np.repeat(a.data, count, axis=-3)
    return Tensor._from_op(out, "repeat_channels", (a,), lambda g: (g.sum(axis=-3, keepdims=True),))


# -- spatial ops ---------------------------------------------------------


def _batched(x: Tensor, op: str) -> bool:
    if x.ndim == 3:
        return False
    if x.ndim == 4:
        return True
    raise ValueError(f"{op}: expected [C,H,W] or [N,C,H,W], got {x.shape}")


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, padding: int = 0, stride: int = 1) -> Tensor:
    """Cross-correlation of ``x`` with ``kernels`` of shape ``[C_out, C_in, k, k]``."""
    batched = _batched(x, "conv2d")
    xd = x.data if batched else x.data[None]
    w = kernels.data
    n, c, h, wd = xd.shape
    co, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels, kernels expect {ci}")
    if bias is not None and bias.shape != (co,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {co} outputs")
    p = int(padding)
    if kh > h + 2 * p or kw > wd + 2 * p:
        raise ValueError("conv2d: kernel larger than padded input")
    ho = (h + 2 * p - kh) // stride + 1
    wo = (wd + 2 * p - kw) // stride + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd

    def window(arr, i, j):
        return arr[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]

    # im2col: rows ordered (c, i, j) to match kernels.reshape(co, -1)
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = window(xp, i, j).transpose(1, 0, 2, 3)
    cols = cols.reshape(c * kh * kw, n * ho * wo)
    w2 = w.reshape(co, -1)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3)

    def vjp(g):
        g = g if batched else g[None]
        g2 = g.transpose(1, 0, 2, 3).reshape(co, n * ho * wo)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(c, kh, kw, n, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    window(gxp, i, j)[...] += gcols[:, i, j].transpose(1, 0, 2, 3)
            gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
            if not batched:
                gx = gx[0]
        if kernels.requires_grad:
            gw = (g2 @ cols.T).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=1)
        return gx, gw, gb

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor._from_op(out if batched else out[0], "conv2d", parents, vjp)


def maxpool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """2x2/stride-2 max pooling; ties route the gradient to the first maximum
    in row-major window order."""
    if window != 2 or stride != 2:
        raise ValueError("maxpool2d supports window 2, stride 2 only")
    batched = _batched(x, "maxpool2d")
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2d: spatial dims must be even, got {h}x{w}")
    blocks = xd.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def vjp(g):
        g = g if batched else g[None]
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        gx = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx if batched else gx[0],)

    return Tensor._from_op(out if batched else out[0], "maxpool2d", (x,), vjp)


def conv_transpose2d(x: Tensor, kernels: Tensor, stride: int = 2) -> Tensor:
    """Stride-2, 2x2 transposed convolution; kernels are ``[C_in, C_out, 2, 2]``."""
    if stride != 2 or kernels.ndim != 4 or kernels.shape[2:] != (2, 2):
        raise ValueError("conv_transpose2d supports 2x2 kernels at stride 2 only")
    batched = _batched(x, "conv_transpose2d")
    xd = x.data if batched else x.data[None]
    w = kernels.data
    n, c, h, wd = xd.shape
    if w.shape[0] != c:
        raise ValueError(f"conv_transpose2d: input has {c} channels, kernels expect {w.shape[0]}")
    co = w.shape[1]
    # (n, h, w, co, 2, 2) -> (n, co, h, 2, w, 2)
    out = np.tensordot(xd, w, axes=([1], [0])).transpose(0, 3, 1, 4, 2, 5).reshape(n, co, 2 * h, 2 * wd)

    def vjp(g):
        g = g if batched else g[None]
        g6 = g.reshape(n, co, h, 2, wd, 2)
        gx = gw = None
        if x.requires_grad:
            gx = np.tensordot(g6, w, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
            if not batched:
                gx = gx[0]
        if kernels.requires_grad:
            gw = np.tensordot(xd, g6, axes=([0, 2, 3], [0, 2, 4]))
        return gx, gw

    return Tensor._from_op(out if batched else out[0], "conv_transpose2d", (x, kernels), vjp)


# -- differentiation -----------------------------------------------------


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss: Tensor, accumulate: bool = False) -> None:
    """Populate ``.grad`` on every leaf that requires it.

    Leaves that already hold a gradient raise unless ``accumulate`` is set,
    so a second call on the same graph without :func:`zero_grad` is an error.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward needs a rank-0 loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    order = _topological(loss)
    leaves = [t for t in order if t.node is None]
    if not accumulate and any(t.grad is not None for t in leaves):
        raise RuntimeError("gradients already populated; call zero_grad before another backward")
    grads = {id(loss): np.ones((), dtype=loss.dtype)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t.node.parents, t.node.vjp(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None
