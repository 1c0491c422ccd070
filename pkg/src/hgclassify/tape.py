"""Minimal reverse-mode autodiff over float64 numpy arrays.

Forward operations build an implicit tape (each Tensor records its parents
and a vector-Jacobian product); ``backward`` walks the tape once in reverse
topological order. The primitive set is exactly what the classification
pipeline needs; everything computes in float64 regardless of input dtype so
results are deterministic and finite-difference checks are meaningful.
"""

from __future__ import annotations

import numpy as np

from .errors import NormalizationError, ShapeError


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, _parents=(), _vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


def constant(value) -> Tensor:
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over axes that were broadcast in the forward pass."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    value = a.value + b.value
    return Tensor(value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    value = a.value - b.value
    return Tensor(value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    value = a.value * b.value
    return Tensor(
        value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    return Tensor(a.value * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul shapes {a.value.shape} x {b.value.shape} do not conform")
    value = a.value @ b.value
    return Tensor(value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T for 2-D tensors."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[1]:
        raise ShapeError(f"matmul_nt shapes {a.value.shape} x {b.value.shape} do not conform")
    value = a.value @ b.value.T
    return Tensor(value, (a, b), lambda g: (g @ b.value, g.T @ a.value))


def transpose(a: Tensor) -> Tensor:
    return Tensor(a.value.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple) -> Tensor:
    orig = a.value.shape
    return Tensor(a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def leaky(a: Tensor, slope: float) -> Tensor:
    """Leaky ReLU; slope 0.0 is plain ReLU, slope 1.0 is the identity."""
    value = np.where(a.value > 0, a.value, slope * a.value)
    return Tensor(value, (a,), lambda g: (np.where(a.value > 0, g, slope * g),))


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    def vjp(g):
        out = np.zeros_like(a.value)
        out[start:stop] = g
        return (out,)

    return Tensor(a.value[start:stop], (a,), vjp)


def gather_cols(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, (slice(None), idx), g)
        return (out,)

    return Tensor(a.value[:, idx], (a,), vjp)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[1:] != b.value.shape[1:]:
        raise ShapeError(f"cannot stack rows of widths {a.value.shape} and {b.value.shape}")
    n = a.value.shape[0]
    value = np.concatenate([a.value, b.value], axis=0)
    return Tensor(value, (a, b), lambda g: (g[:n], g[n:]))


def mean_rows(a: Tensor) -> Tensor:
    """Mean over axis 0, keeping a leading singleton dimension."""
    n = a.value.shape[0]
    value = a.value.mean(axis=0, keepdims=True)
    return Tensor(value, (a,), lambda g: (np.broadcast_to(g / n, a.value.shape).copy(),))


def block_mean_rows(a: Tensor, block: int) -> Tensor:
    """Mean over consecutive row blocks of equal size: (n*block, D) -> (n, D)."""
    rows, dim = a.value.shape
    if block < 1 or rows % block:
        raise ShapeError(f"{rows} rows do not split into blocks of {block}")
    value = a.value.reshape(rows // block, block, dim).mean(axis=1)
    return Tensor(value, (a,), lambda g: (np.repeat(g / block, block, axis=0),))


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(a.value[idx], (a,), vjp)


def take_per_row(a: Tensor, cols: np.ndarray) -> Tensor:
    """One entry per row, as a column vector: out[i, 0] = a[i, cols[i]]."""
    cols = np.asarray(cols, dtype=np.intp)
    rows = np.arange(a.value.shape[0])

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, (rows, cols), g[:, 0])
        return (out,)

    return Tensor(a.value[rows, cols][:, None], (a,), vjp)


def l2norm_rows(a: Tensor) -> Tensor:
    """Normalize each row to unit L2 norm; zero rows are a hard error."""
    norms = np.sqrt(np.sum(a.value * a.value, axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise NormalizationError("cannot L2-normalize a zero row")
    value = a.value / norms

    def vjp(g):
        dot = np.sum(g * a.value, axis=1, keepdims=True)
        return (g / norms - a.value * (dot / norms**3),)

    return Tensor(value, (a,), vjp)


def softmax_rows(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax with max subtraction; optional boolean support mask.

    Masked-out entries get exactly zero probability. Every row must have at
    least one supported entry.
    """
    x = a.value if mask is None else np.where(mask, a.value, -np.inf)
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    s = np.sum(e, axis=1, keepdims=True)
    p = e / s

    def vjp(g):
        inner = np.sum(g * p, axis=1, keepdims=True)
        return (p * (g - inner),)

    return Tensor(p, (a,), vjp)


def logsumexp_cols(a: Tensor) -> Tensor:
    """Log-sum-exp over axis 1, keepdims."""
    m = np.max(a.value, axis=1, keepdims=True)
    e = np.exp(a.value - m)
    s = np.sum(e, axis=1, keepdims=True)
    value = m + np.log(s)
    return Tensor(value, (a,), lambda g: (g * (e / s),))


def sum_all(a: Tensor) -> Tensor:
    return Tensor(np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, a.value.shape).copy(),))


def backward(root: Tensor) -> None:
    """Accumulate gradients of a scalar root into every tensor on its tape."""
    if root.value.ndim != 0:
        raise ShapeError("backward requires a scalar root")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    for node in order:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._vjp is None or not node._parents:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            parent.grad = parent.grad + g
