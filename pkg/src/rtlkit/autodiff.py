"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray plus a backward closure; calling `backward()` on a
scalar loss walks the graph in reverse topological order and accumulates
gradients into every leaf created with requires_grad=True.  The op set is
exactly what the recognition pipeline needs; each op validates shapes and
raises ShapeError naming the op and offending dims.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError


class Tensor:
    """Node in the compute graph: value, optional grad, and parent links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"

    def backward(self):
        """Seed this node with ones and propagate gradients to all leaves."""
        topo, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def constant(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=False)


def _accumulate(node: Tensor, grad: np.ndarray):
    if not node.requires_grad:
        return
    if node.grad is None:
        if grad.base is None and grad.dtype == node.data.dtype and grad.shape == node.data.shape:
            # freshly allocated by the producing op: take ownership
            node.grad = grad
        else:
            node.grad = np.array(grad, dtype=node.data.dtype, copy=True)
    else:
        node.grad += grad


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def backward(g):
        _accumulate(x, factor * g)

    return Tensor(x.data * np.asarray(factor, dtype=x.data.dtype), parents=(x,), backward=backward)


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    bd = b.data.T if transpose_b else b.data
    if a.data.ndim != 2 or bd.ndim != 2 or a.data.shape[1] != bd.shape[0]:
        raise ShapeError(
            f"matmul: {a.shape} @ {b.shape}" + (" (transposed)" if transpose_b else "")
        )
    out_data = a.data @ bd

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ bd.T)
        if b.requires_grad:
            gb = a.data.T @ g
            _accumulate(b, gb.T if transpose_b else gb)

    return Tensor(out_data, parents=(a, b), backward=backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map x @ W (+ b)."""
    out = matmul(x, weight)
    if bias is not None:
        if bias.data.shape != (weight.data.shape[1],):
            raise ShapeError(f"linear: bias {bias.shape} for weight {weight.shape}")
        out = add(out, bias)
    return out


def relu(x: Tensor) -> Tensor:
    def backward(g):
        _accumulate(x, g * (x.data > 0))

    return Tensor(np.maximum(x.data, 0), parents=(x,), backward=backward)


def softmax_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows: expected 2-d input, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=1, keepdims=True)
        _accumulate(x, y * (g - inner))

    return Tensor(y, parents=(x,), backward=backward)


def dot_rows(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ShapeError(f"dot_rows: shapes {a.shape} vs {b.shape}")
    out_data = (a.data * b.data).sum(axis=1)

    def backward(g):
        _accumulate(a, g[:, None] * b.data)
        _accumulate(b, g[:, None] * a.data)

    return Tensor(out_data, parents=(a, b), backward=backward)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ShapeError(f"gather_rows: index must be 1-d, got {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.data.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.shape}")

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, index, g)
            _accumulate(x, gx)

    return Tensor(x.data[index], parents=(x,), backward=backward)


def concat_cols(parts: list) -> Tensor:
    rows = {p.data.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {sorted(rows)}")
    widths = [p.data.shape[1] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=1)
    bounds = np.cumsum([0] + widths)

    def backward(g):
        for part, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            _accumulate(part, g[:, lo:hi])

    return Tensor(out_data, parents=tuple(parts), backward=backward)


def segment_max(x: Tensor, starts: np.ndarray) -> Tensor:
    """Column-wise max over contiguous row segments.

    `starts` holds the first row of each segment (strictly increasing,
    starts[0] == 0); every segment must be non-empty.  Gradient routes to the
    first maximal row of each segment.
    """
    starts = np.asarray(starts, dtype=np.int64)
    m = x.data.shape[0]
    if starts.size == 0 or starts[0] != 0 or np.any(np.diff(starts) <= 0) or starts[-1] >= m:
        raise ShapeError(f"segment_max: bad segment starts for {m} rows")
    out_data = np.maximum.reduceat(x.data, starts, axis=0)

    seg_of_row = np.repeat(
        np.arange(starts.size), np.diff(np.append(starts, m))
    )

    def backward(g):
        if not x.requires_grad:
            return
        is_max = x.data == out_data[seg_of_row]
        row_ids = np.arange(m, dtype=np.int32)[:, None]
        candidates = np.where(is_max, row_ids, m)
        winner = np.minimum.reduceat(candidates, starts, axis=0)
        gx = np.zeros_like(x.data)
        cols = np.broadcast_to(np.arange(x.data.shape[1]), winner.shape)
        np.add.at(gx, (winner.ravel(), cols.ravel()), g.ravel())
        _accumulate(x, gx)

    return Tensor(out_data, parents=(x,), backward=backward)


def cross_entropy_mean(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over rows of -scores[t, label_t] + logsumexp(scores[t])."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = scores.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {labels.shape} labels for {scores.shape} scores")
    if n == 0:
        raise ShapeError("cross_entropy: empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise ShapeError(f"cross_entropy: label outside [0, {c})")
    shifted = scores.data - scores.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    loss = -log_probs[np.arange(n), labels].mean()

    def backward(g):
        p = e / denom
        p[np.arange(n), labels] -= 1.0
        _accumulate(scores, (float(g) / n) * p)

    return Tensor(np.asarray(loss, dtype=scores.data.dtype), parents=(scores,), backward=backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar sum(x * weights) against a constant weight array (test harness)."""
    weights = np.asarray(weights, dtype=x.data.dtype)
    if weights.shape != x.data.shape:
        raise ShapeError(f"weighted_sum: weights {weights.shape} vs data {x.shape}")

    def backward(g):
        _accumulate(x, float(g) * weights)

    return Tensor(
        np.asarray((x.data * weights).sum(), dtype=x.data.dtype),
        parents=(x,),
        backward=backward,
    )


def softmax_np(x: np.ndarray) -> np.ndarray:
    """Plain-array row softmax with max subtraction (inference paths)."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)
