"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tape records every operation at construction time, so the node list is
already topologically ordered; backward walks it once in reverse, adding
gradient contributions. Running the same operations with tape=None executes
the identical numpy calls without recording, so taped and untaped forward
values agree bitwise.

Complex matrices are carried as (real, imag) pairs of real tensors; the
complex inverse goes through the 2m x 2m real embedding so only a real LU
inverse is ever differentiated.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tape", "Tensor"]


class Tensor:
    __slots__ = ("value", "grad", "tape", "requires_grad", "_parents", "_backward", "_grad_owned")

    def __init__(self, value, tape=None, requires_grad=False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.tape = tape
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self._grad_owned = False
        if tape is not None and requires_grad:
            tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def add_grad(self, g):
        # alias the first contribution (never mutated in place until owned)
        if self.grad is None:
            self.grad = g
            self._grad_owned = False
        elif self._grad_owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._grad_owned = True


class Tape:
    """Operation recorder; create one per loss evaluation."""

    def __init__(self):
        self.nodes = []

    def leaf(self, value, requires_grad=True) -> Tensor:
        return Tensor(value, tape=self if requires_grad else None, requires_grad=requires_grad)

    def backward(self, loss: Tensor):
        """Reverse pass: visits recorded nodes exactly once, newest first."""
        if loss.value.shape != ():
            raise ValueError("backward expects a scalar loss")
        loss.add_grad(np.ones(()))
        for node in reversed(self.nodes):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _meta(*tensors):
    tape = None
    requires = False
    for t in tensors:
        if t.requires_grad:
            requires = True
            if t.tape is not None:
                if tape is not None and tape is not t.tape:
                    raise ValueError("operands belong to different tapes")
                tape = t.tape
    return tape, requires


def _unbroadcast(grad, shape):
    """Sum gradient over axes that numpy broadcasting expanded."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _node(value, parents, backward):
    tape, requires = _meta(*parents)
    if tape is None:
        return Tensor(value, requires_grad=requires)
    return Tensor(value, tape=tape, requires_grad=True, parents=parents, backward=backward)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    value = a.value + b.value

    def backward(g):
        if a.requires_grad:
            a.add_grad(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b.add_grad(_unbroadcast(g, b.value.shape))

    return _node(value, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    value = a.value - b.value

    def backward(g):
        if a.requires_grad:
            a.add_grad(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b.add_grad(_unbroadcast(-g, b.value.shape))

    return _node(value, (a, b), backward)


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            a.add_grad(-g)

    return _node(-a.value, (a,), backward)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _wrap(a), _wrap(b)
    value = a.value * b.value

    def backward(g):
        if a.requires_grad:
            a.add_grad(_unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            b.add_grad(_unbroadcast(g * a.value, b.value.shape))

    return _node(value, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    value = a.value / b.value

    def backward(g):
        if a.requires_grad:
            a.add_grad(_unbroadcast(g / b.value, a.value.shape))
        if b.requires_grad:
            b.add_grad(_unbroadcast(-g * a.value / (b.value**2), b.value.shape))

    return _node(value, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    value = a.value @ b.value

    def backward(g):
        if a.requires_grad:
            a.add_grad(g @ b.value.T)
        if b.requires_grad:
            b.add_grad(a.value.T @ g)

    return _node(value, (a, b), backward)


def affine(x, w, b) -> Tensor:
    """Fused x @ w + b (bias broadcast over rows)."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    value = x.value @ w.value
    value += b.value

    def backward(g):
        if x.requires_grad:
            x.add_grad(g @ w.value.T)
        if w.requires_grad:
            w.add_grad(x.value.T @ g)
        if b.requires_grad:
            b.add_grad(g.sum(axis=0))

    return _node(value, (x, w, b), backward)


def transpose(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            a.add_grad(g.T)

    return _node(a.value.T.copy(), (a,), backward)


def relu(a) -> Tensor:
    a = _wrap(a)
    value = np.maximum(a.value, 0.0)

    def backward(g):
        if a.requires_grad:
            a.add_grad(g * (a.value > 0.0))

    return _node(value, (a,), backward)


def gather_rows(a, index) -> Tensor:
    """Rows of a 2-d tensor selected by an integer index list."""
    a = _wrap(a)
    index = np.asarray(index, dtype=np.int64)
    value = a.value[index]

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.value)
            np.add.at(acc, index, g)
            a.add_grad(acc)

    return _node(value, (a,), backward)


def segment_sum(a, index, num_segments) -> Tensor:
    """Scatter-add rows of a into `num_segments` bins (message aggregation)."""
    a = _wrap(a)
    index = np.asarray(index, dtype=np.int64)
    value = np.zeros((num_segments,) + a.value.shape[1:])
    np.add.at(value, index, a.value)

    def backward(g):
        if a.requires_grad:
            a.add_grad(g[index])

    return _node(value, (a,), backward)


def scatter2d(shape, rows, cols, vec, base=None) -> Tensor:
    """Dense (shape) matrix with vec added at (rows[k], cols[k]); `base` is a
    constant array the values are added onto."""
    vec = _wrap(vec)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    value = np.zeros(shape) if base is None else np.array(base, dtype=np.float64)
    np.add.at(value, (rows, cols), vec.value)

    def backward(g):
        if vec.requires_grad:
            vec.add_grad(g[rows, cols])

    return _node(value, (vec,), backward)


def concat(parts, axis=0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    value = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for p, piece in zip(parts, pieces):
            if p.requires_grad:
                p.add_grad(piece)

    return _node(value, tuple(parts), backward)


def block(a, r0, r1, c0, c1) -> Tensor:
    """Contiguous sub-block a[r0:r1, c0:c1]."""
    a = _wrap(a)
    value = a.value[r0:r1, c0:c1].copy()

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.value)
            acc[r0:r1, c0:c1] = g
            a.add_grad(acc)

    return _node(value, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.value.shape

    def backward(g):
        if a.requires_grad:
            a.add_grad(g.reshape(old))

    return _node(a.value.reshape(shape).copy(), (a,), backward)


def sum_all(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            a.add_grad(np.broadcast_to(g, a.value.shape).copy())

    return _node(a.value.sum(), (a,), backward)


def frobenius_sq(a) -> Tensor:
    """Sum of squared entries."""
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            a.add_grad(2.0 * g * a.value)

    return _node(np.sum(a.value**2), (a,), backward)


def inverse(a) -> Tensor:
    """LU-based inverse of a square real matrix; d(X^{-1}) = -X^{-1} dX X^{-1}."""
    a = _wrap(a)
    value = np.linalg.inv(a.value)

    def backward(g):
        if a.requires_grad:
            a.add_grad(-value.T @ g @ value.T)

    return _node(value, (a,), backward)


def clamp_away_from_zero(a, eps) -> Tensor:
    """Push entries with |x| < eps to +-eps (sign of zero taken as +).

    Gradient passes through unchanged; used to keep row-sum scaling finite
    while training.
    """
    a = _wrap(a)
    value = a.value.copy()
    small = np.abs(value) < eps
    value[small] = np.where(value[small] < 0.0, -eps, eps)

    def backward(g):
        if a.requires_grad:
            a.add_grad(g)

    return _node(value, (a,), backward)


# ---------------------------------------------------------------------------
# Complex helpers over (real, imag) tensor pairs.


def cadd(x, y):
    return (add(x[0], y[0]), add(x[1], y[1]))


def csub(x, y):
    return (sub(x[0], y[0]), sub(x[1], y[1]))


def cmatmul(x, y):
    re = sub(matmul(x[0], y[0]), matmul(x[1], y[1]))
    im = add(matmul(x[0], y[1]), matmul(x[1], y[0]))
    return (re, im)


def cconj_transpose(x):
    return (transpose(x[0]), neg(transpose(x[1])))


def cinverse(x):
    """Complex inverse via the [[re, -im], [im, re]] real embedding."""
    re, im = x
    m = re.value.shape[0]
    top = concat([re, neg(im)], axis=1)
    bottom = concat([im, re], axis=1)
    emb = concat([top, bottom], axis=0)
    inv = inverse(emb)
    return (block(inv, 0, m, 0, m), block(inv, m, 2 * m, 0, m))


def cfrobenius_sq(x):
    return add(frobenius_sq(x[0]), frobenius_sq(x[1]))


def cscale(x, zr, zi):
    """Multiply a complex pair by the complex scalar zr + i*zi (constants)."""
    re = sub(mul(x[0], zr), mul(x[1], zi))
    im = add(mul(x[0], zi), mul(x[1], zr))
    return (re, im)
