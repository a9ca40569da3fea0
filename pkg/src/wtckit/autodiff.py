"""Reverse-mode automatic differentiation over dense float64 tensors.

Tape-based: every operation appends a node (a ``Tensor``) holding its value
and, for each input, a vector-Jacobian-product closure. The closures are
written in terms of the same tensor operations, so a backward pass can itself
be recorded on the tape (``backward_as_graph``) and differentiated again.
That second-order capability is what lets a gradient-norm penalty be
optimized with respect to network parameters.

Graphs are rebuilt on every training step and confined to one execution
context; there is no shared mutable state between graphs.
"""

import itertools
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class DomainError(ValueError):
    """Operand values outside the mathematical domain (log/sqrt of negatives)."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf; raised at the op boundary."""


class GraphError(RuntimeError):
    """Backward invoked on an unsuitable node (e.g. non-scalar output)."""


_tid_counter = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording; tensors created inside are plain constants."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array plus its position on the tape.

    ``_parents`` is a tuple of ``(input_tensor, vjp)`` pairs where ``vjp``
    maps the output adjoint (a Tensor) to this input's adjoint contribution.
    Constants have no parents. Creation order (``_tid``) is a topological
    order of the graph: parents always precede children.
    """

    __slots__ = ("data", "_parents", "_tid")

    def __init__(self, data, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self._parents = tuple(parents) if _grad_enabled else ()
        self._tid = next(_tid_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data)

    def detach(self):
        """A constant view of this tensor's value, cut from the tape."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, tid={self._tid})"

    # -- operator sugar; scalars and arrays lift to constants --
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / float(other))

    def __getitem__(self, key):
        return tslice(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def square(self):
        return square(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return tabs(self)

    def transpose(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x):
    """A tensor with no graph attachment, regardless of grad mode."""
    t = Tensor(x)
    t._parents = ()
    return t


_ONES_CACHE = {}


def _check_finite(arr, kind):
    # any NaN/Inf element forces a non-finite sum (inf-inf -> nan), so one
    # allocation-free reduction suffices; BLAS dot is the fastest reduction
    # for the large matrices that dominate
    n = arr.size
    if n > 4096 and arr.flags.c_contiguous:
        ones = _ONES_CACHE.get(n)
        if ones is None:
            ones = _ONES_CACHE[n] = np.ones(n)
        total = float(arr.reshape(-1) @ ones)
    else:
        total = arr.sum()
    if not np.isfinite(total):
        raise NonFiniteError(f"non-finite result from '{kind}'")


def _node(kind, data, parents):
    _check_finite(data, kind)
    return Tensor(data, parents)


def _scalar_or_same(kind, a, b):
    """Elementwise ops allow equal shapes or a size-1 operand on either side."""
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"'{kind}' shape mismatch: {a.shape} vs {b.shape}; "
                     f"use broadcast_add for row-vector bias addition")


def _sum_to(g, shape):
    """Reduce adjoint g down to `shape` (counterpart of size-1 broadcasting)."""
    if g.shape == shape:
        return g
    return reshape(tsum(g), shape)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _scalar_or_same("add", a, b)
    return _node("add", a.data + b.data,
                 ((a, lambda g: _sum_to(g, a.shape)),
                  (b, lambda g: _sum_to(g, b.shape))))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _scalar_or_same("sub", a, b)
    return _node("sub", a.data - b.data,
                 ((a, lambda g: _sum_to(g, a.shape)),
                  (b, lambda g: _sum_to(neg(g), b.shape))))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _scalar_or_same("elementwise-mul", a, b)
    with np.errstate(over="ignore", invalid="ignore"):
        data = a.data * b.data
    return _node("elementwise-mul", data,
                 ((a, lambda g: _sum_to(mul(g, b), a.shape)),
                  (b, lambda g: _sum_to(mul(g, a), b.shape))))


def neg(a):
    a = as_tensor(a)
    return _node("negate", -a.data, ((a, lambda g: neg(g)),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes do not conform: {a.shape} @ {b.shape}")
    return _node("matmul", a.data @ b.data,
                 ((a, lambda g: matmul(g, transpose(b))),
                  (b, lambda g: matmul(transpose(a), g))))


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    # view, not copy: tensor data is replaced wholesale, never written through
    out = Tensor(a.data.T, ((a, lambda g: transpose(g)),))
    return out


def relu(a):
    a = as_tensor(a)
    mask = constant((a.data > 0).astype(np.float64))   # subgradient 0 at 0
    return _node("relu", np.maximum(a.data, 0.0), ((a, lambda g: mul(g, mask)),))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    out = _node("exp", data, ())
    out._parents = ((a, lambda g: mul(g, out)),) if _grad_enabled else ()
    return out


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log of non-positive input")
    return _node("log", np.log(a.data), ((a, lambda g: mul(g, reciprocal(a))),))


def reciprocal(a):
    a = as_tensor(a)
    if np.any(a.data == 0.0):
        raise DomainError("reciprocal of zero")
    out = _node("reciprocal", 1.0 / a.data, ())
    out._parents = ((a, lambda g: neg(mul(g, square(out)))),) if _grad_enabled else ()
    return out


def square(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.square(a.data)
    return _node("square", data, ((a, lambda g: mul(g, mul(a, 2.0))),))


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt of negative input")
    out = _node("sqrt", np.sqrt(a.data), ())
    out._parents = ((a, lambda g: mul(g, mul(reciprocal(out), 0.5))),) if _grad_enabled else ()
    return out


def tabs(a):
    a = as_tensor(a)
    sign = constant(np.sign(a.data))                   # subgradient 0 at 0
    return _node("abs", np.abs(a.data), ((a, lambda g: mul(g, sign)),))


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = reshape(g, _keepdims_shape(a.shape, axis))
        return expand(g, a.shape)

    return _node("sum", data, ((a, vjp),))


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError("mean over empty axis")
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def _keepdims_shape(shape, axis):
    s = list(shape)
    s[axis] = 1
    return tuple(s)


def expand(a, shape):
    """Broadcast to `shape` following numpy rules; adjoint sums back down."""
    a = as_tensor(a)
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError as err:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from err

    def vjp(g):
        extra = len(shape) - a.ndim
        for _ in range(extra):
            g = tsum(g, axis=0)
        for ax, n in enumerate(a.shape):
            if n == 1 and shape[extra + ax] != 1:
                g = tsum(g, axis=ax, keepdims=True)
        return g

    return _node("expand", data, ((a, vjp),))


def broadcast_add(x, b):
    """Row-wise bias addition: x is (B, n), b is (n,)."""
    x, b = as_tensor(x), as_tensor(b)
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"broadcast-add expects (B,n)+(n,), got {x.shape}+{b.shape}")
    return _node("broadcast-add", x.data + b.data,
                 ((x, lambda g: g),
                  (b, lambda g: tsum(g, axis=0))))


def affine(x, w, b):
    """x @ w + b in one node (the dense-layer hot path); equivalent to
    broadcast_add(matmul(x, w), b)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine shapes do not conform: {x.shape} @ {w.shape}")
    if b.ndim != 1 or b.shape[0] != w.shape[1]:
        raise ShapeError(f"affine bias {b.shape} does not match {w.shape}")
    return _node("affine", x.data @ w.data + b.data,
                 ((x, lambda g: matmul(g, transpose(w))),
                  (w, lambda g: matmul(transpose(x), g)),
                  (b, lambda g: tsum(g, axis=0))))


def reshape(a, shape):
    a = as_tensor(a)
    if int(np.prod(shape)) != a.size and -1 not in np.atleast_1d(shape):
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    old = a.shape
    return _node("reshape", a.data.reshape(shape), ((a, lambda g: reshape(g, old)),))


def tslice(a, key):
    a = as_tensor(a)
    data = a.data[key]
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data)
    return _node("slice", data.copy(), ((a, lambda g: unslice(g, a.shape, key)),))


def unslice(g, shape, key):
    """Scatter g into a zero tensor of `shape` at `key` (adjoint of slice)."""
    g = as_tensor(g)
    data = np.zeros(shape)
    data[key] = g.data
    return _node("unslice", data, ((g, lambda gg: tslice(gg, key)),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of no tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    parents = []
    offset = 0
    for t in tensors:
        n = t.shape[axis]
        key = tuple(slice(None) if ax != axis else slice(offset, offset + n)
                    for ax in range(t.ndim))
        parents.append((t, lambda g, key=key: tslice(g, key)))
        offset += n
    return _node("concat", data, parents)


def permute_rows(a, perms):
    """Independently permute each column's rows: out[i, j] = a[perms[i, j], j].

    `perms` is an int array of a's shape whose every column is a permutation
    of range(B). Linear, so the adjoint is the inverse permutation.
    """
    a = as_tensor(a)
    perms = np.asarray(perms, dtype=np.intp)
    if a.ndim != 2 or perms.shape != a.shape:
        raise ShapeError(f"permute_rows expects matching 2-D shapes, "
                         f"got {a.shape} and {perms.shape}")
    inv = np.empty_like(perms)
    np.put_along_axis(inv, perms, np.arange(a.shape[0])[:, None], axis=0)
    data = np.take_along_axis(a.data, perms, axis=0)
    return _node("permute-rows", data, ((a, lambda g: permute_rows(g, inv)),))


_APPLY = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "elementwise-mul": mul,
    "relu": relu,
    "exp": exp,
    "log": log,
    "square": square,
    "sqrt": sqrt,
    "sum": tsum,
    "mean": tmean,
    "reshape": reshape,
    "slice": tslice,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "broadcast-add": broadcast_add,
    "negate": neg,
    "abs": tabs,
}


def apply(kind, *inputs, **kwargs):
    """Dispatch a primitive by name; see _APPLY for the supported kinds."""
    if kind not in _APPLY:
        raise ValueError(f"unknown op kind '{kind}'")
    return _APPLY[kind](*inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward passes
# ---------------------------------------------------------------------------

def _ancestors(out):
    seen = set()
    stack = [out]
    nodes = []
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        nodes.append(n)
        stack.extend(p for p, _ in n._parents)
    return nodes


def _backprop(out, wrts, create_graph):
    if out.data.size != 1:
        raise GraphError(f"backward needs a scalar output, got shape {out.shape}")
    nodes = _ancestors(out)
    wrt_ids = {id(w) for w in wrts}

    # A node is active iff some wrt feeds it; vjps into inactive inputs are
    # skipped, so e.g. frozen-critic passes cost nothing extra.
    active = set()
    for n in sorted(nodes, key=lambda t: t._tid):
        if id(n) in wrt_ids or any(id(p) in active for p, _ in n._parents):
            active.add(id(n))

    grads = {}
    if id(out) in active:
        grads[id(out)] = constant(np.ones(out.shape))
        ctx = no_grad() if not create_graph else _nullcontext()
        with ctx:
            for n in sorted(nodes, key=lambda t: -t._tid):
                g = grads.get(id(n))
                if g is None:
                    continue
                for p, vjp in n._parents:
                    if id(p) not in active:
                        continue
                    contrib = vjp(g)
                    prev = grads.get(id(p))
                    grads[id(p)] = contrib if prev is None else add(prev, contrib)
    return grads


@contextmanager
def _nullcontext():
    yield


def backward(output, wrt):
    """Gradients of a scalar `output` w.r.t. each tensor in `wrt`.

    Returns {tensor: gradient} with plain constant gradients; tensors the
    output does not depend on get zeros.
    """
    wrt = list(wrt)
    grads = _backprop(output, wrt, create_graph=False)
    return {w: grads.get(id(w), constant(np.zeros(w.shape))) for w in wrt}


def backward_as_graph(output, wrt):
    """Gradient of `output` w.r.t. the single tensor `wrt`, as a graph node.

    The result can be differentiated again: backward through it yields the
    correct second-order derivatives.
    """
    grads = _backprop(output, [wrt], create_graph=True)
    g = grads.get(id(wrt))
    return g if g is not None else constant(np.zeros(wrt.shape))


def finite_difference_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar f at x; the standing test oracle."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = as_tensor(x)
    base = x.data
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        bump = np.zeros_like(base).reshape(-1)
        bump[i] = h
        bump = bump.reshape(base.shape)
        hi = f(constant(base + bump)).item()
        lo = f(constant(base - bump)).item()
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteError("non-finite evaluation in finite differences")
        flat[i] = (hi - lo) / (2.0 * h)
    return constant(grad)
