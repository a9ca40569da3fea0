#!/usr/bin/env python3
"""Tour of the tensor engine: forward ops, gradients, and second order.

The gradient-penalty term used by the adversarial trainers differentiates a
gradient norm, so the engine records backward passes on the tape too; this
script shows both levels against the finite-difference oracle.
"""
import numpy as np

from wtckit import autodiff as ad

# forward values
x = ad.constant([[1.0, 2.0], [3.0, 4.0]])
y = ad.constant([[5.0], [6.0]])
print("matmul [[1,2],[3,4]] @ [[5],[6]] =", ad.matmul(x, y).data.ravel())
print("relu(-1, 0, 2) =", ad.relu(ad.constant([-1.0, 0.0, 2.0])).data)

# first-order gradients
v = ad.constant([1.0, 2.0])
loss = ad.tmean(ad.square(v))
print("\nd mean(v^2)/dv at [1,2]:",
      ad.backward(loss, [v])[v].data, "(expected [1, 2])")

# second order: the gradient itself is a graph node
w = ad.constant([2.0])
cube = ad.tsum(ad.mul(ad.mul(w, w), w))
grad = ad.backward_as_graph(cube, w)
curv = ad.backward(ad.tsum(grad), [w])[w]
print("x^3 at 2: grad", grad.data, "grad-of-grad", curv.data,
      "(expected 12, 12)")

# the standing oracle: central finite differences
rng = np.random.default_rng(0)
mat = ad.constant(rng.standard_normal((4, 3)))


def f(t):
    return ad.tsum(ad.relu(ad.matmul(t, mat)))


point = ad.constant(rng.standard_normal((2, 4)) + 3.0)
exact = ad.backward(f(point), [point])[point].data
approx = ad.finite_difference_gradient(f, point).data
print("\nfinite-difference agreement:",
      np.abs(exact - approx).max(), "(should be ~1e-10)")

# non-finite values fail fast at the op boundary
try:
    ad.exp(ad.constant([1e4]))
except ad.NonFiniteError as err:
    print("\nfail-fast works:", err)
