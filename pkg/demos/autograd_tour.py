"""
A short tour of the tape
========================

Every Tensor remembers the operation that produced it.  Calling
``backward`` on a scalar walks that record in reverse and leaves a
gradient on each leaf.
"""

import numpy as np

from siamcd import tensor as T
from siamcd.gradcheck import grad_check
from siamcd.tensor import Tensor

rng = np.random.default_rng(0)

# A two-by-two example small enough to check by hand: d/da sum(a*b) = b.
a = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
b = Tensor([[5.0, 6.0], [7.0, 8.0]], requires_grad=True)
T.backward(T.sum(a * b))
print("grad of a:\n", a.grad)

# Calling backward again without clearing is refused, so gradients are
# never silently doubled.
try:
    T.backward(T.sum(a * b))
except RuntimeError as exc:
    print("second backward:", exc)
T.zero_grad([a, b])

# The spatial ops used by the network: padded convolution, 2x2 pooling and
# the stride-2 transposed convolution.
x = Tensor(rng.normal(size=(2, 8, 8)))
w = Tensor(rng.normal(size=(3, 2, 3, 3)))
y = T.conv2d(x, w, padding=1)
print("conv2d:", x.shape, "->", y.shape)
print("maxpool2d:", y.shape, "->", T.maxpool2d(y).shape)
up = T.conv_transpose2d(T.maxpool2d(y), Tensor(rng.normal(size=(3, 2, 2, 2))))
print("conv_transpose2d:", T.maxpool2d(y).shape, "->", up.shape)


# Central differences are the referee.  Inputs must be 64-bit.
def pooled_energy(x, w):
    pooled = T.maxpool2d(T.relu(T.conv2d(x, w, padding=1)))
    return T.sum(T.mul(pooled, pooled))


report = grad_check(pooled_energy, [Tensor(rng.normal(size=(2, 6, 6))), Tensor(rng.normal(size=(2, 2, 3, 3)))])
print(f"conv -> relu -> pool: max relative error {report.max_rel_err:.2e} (passed: {report.passed})")
