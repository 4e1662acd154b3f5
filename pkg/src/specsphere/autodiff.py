"""Tape-based reverse-mode autodiff over dense float64 matrices.

Every :class:`Value` holds a 2-D array. Operations on values that require
gradients record their parents and a closure mapping the output gradient to
parent gradients; :func:`backward` walks the recorded graph once in reverse
topological order. Only first-order gradients are supported.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, ShapeError
from .sparse import SparseMatrix, SparseValue


def _as2d(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeError(f"Value data must be at most 2-D, got {a.ndim}-D")
    return a


class Value:
    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), backward: Callable | None = None):
        self.data = _as2d(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self.parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() needs a single-element value")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Value(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def lift(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _make(data, parents: tuple, backward: Callable, op: str) -> Value:
    if any(p.requires_grad for p in parents):
        return Value(data, True, op, parents, backward)
    return Value(data, False, op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    for axis in (0, 1):
        if shape[axis] == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Value, b: Value):
    for x, y in zip(a.shape, b.shape):
        if x != y and x != 1 and y != 1:
            raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Value:
    a, b = lift(a), lift(b)
    _check_broadcast(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Value:
    a, b = lift(a), lift(b)
    _check_broadcast(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Value:
    a, b = lift(a), lift(b)
    _check_broadcast(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Value:
    a, b = lift(a), lift(b)
    _check_broadcast(a, b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a) -> Value:
    a = lift(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def square(a: Value) -> Value:
    return _make(a.data ** 2, (a,), lambda g: (2.0 * g * a.data,), "square")


def relu(a: Value) -> Value:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a: Value, slope: float = 0.01) -> Value:
    scale = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(a: Value) -> Value:
    # two-branch form avoids overflow in exp for large |x|
    x = a.data
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a: Value) -> Value:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def exp(a: Value) -> Value:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a: Value) -> Value:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def rsqrt_safe(a: Value) -> Value:
    """x**-1/2 for positive entries, 0 elsewhere (isolated-node degree convention)."""
    pos = a.data > 0
    safe = np.where(pos, a.data, 1.0)
    y = np.where(pos, safe ** -0.5, 0.0)
    dy = np.where(pos, -0.5 * safe ** -1.5, 0.0)
    return _make(y, (a,), lambda g: (g * dy,), "rsqrt_safe")


def detach(a: Value) -> Value:
    return Value(a.data.copy())


# ---------------------------------------------------------------- reductions

def sum(a: Value, axis: int | None = None) -> Value:  # noqa: A001 - mirrors numpy
    out = a.data.sum(axis=axis, keepdims=axis is not None)
    return _make(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean(a: Value) -> Value:
    size = a.data.size
    return _make(a.data.mean(), (a,),
                 lambda g: (np.full(a.shape, g[0, 0] / size),), "mean")


def row_norm(a: Value) -> Value:
    """Euclidean norm of each row, shape (rows, 1); subgradient 0 at the origin."""
    y = np.sqrt((a.data ** 2).sum(axis=1, keepdims=True))
    safe = np.where(y > 0, y, 1.0)

    def back(g):
        return (np.where(y > 0, g / safe, 0.0) * a.data,)

    return _make(y, (a,), back, "row_norm")


def softmax_rows(a: Value) -> Value:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    return _make(y, (a,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),),
                 "softmax_rows")


def log_softmax_rows(a: Value) -> Value:
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse
    soft = np.exp(y)
    return _make(y, (a,), lambda g: (g - soft * g.sum(axis=1, keepdims=True),),
                 "log_softmax_rows")


# ---------------------------------------------------------------- structure

def matmul(a, b) -> Value:
    a, b = lift(a), lift(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(a: Value) -> Value:
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def concat_cols(values: Sequence[Value]) -> Value:
    values = [lift(v) for v in values]
    rows = {v.shape[0] for v in values}
    if len(rows) != 1:
        raise ShapeError("concat_cols needs equal row counts")
    splits = np.cumsum([v.shape[1] for v in values])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=1))

    return _make(np.concatenate([v.data for v in values], axis=1), tuple(values), back,
                 "concat_cols")


def concat_rows(values: Sequence[Value]) -> Value:
    values = [lift(v) for v in values]
    if len({v.shape[1] for v in values}) != 1:
        raise ShapeError("concat_rows needs equal column counts")
    splits = np.cumsum([v.shape[0] for v in values])[:-1]
    return _make(np.concatenate([v.data for v in values], axis=0), tuple(values),
                 lambda g: tuple(np.split(g, splits, axis=0)), "concat_rows")


def gather_rows(a: Value, idx: np.ndarray) -> Value:
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), back, "gather_rows")


def segment_sum(a: Value, idx: np.ndarray, n: int) -> Value:
    """out[k] = sum of rows a[e] with idx[e] == k, for k < n."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((n, a.shape[1]))
    np.add.at(out, idx, a.data)
    return _make(out, (a,), lambda g: (g[idx],), "segment_sum")


def head_scores(v: Value, a: Value) -> Value:
    """Per-head dot products: v is (n, H*d), a is (H, d); returns (n, H)."""
    heads, d = a.shape
    n = v.shape[0]
    if v.shape[1] != heads * d:
        raise ShapeError(f"head_scores: {v.shape} incompatible with {a.shape}")
    v3 = v.data.reshape(n, heads, d)
    out = np.einsum("nhd,hd->nh", v3, a.data)

    def back(g):
        gv = (g[:, :, None] * a.data[None, :, :]).reshape(n, heads * d)
        ga = np.einsum("nh,nhd->hd", g, v3)
        return gv, ga

    return _make(out, (v, a), back, "head_scores")


def spmm(s, v) -> Value:
    """Sparse-times-dense product.

    ``s`` is either a constant :class:`SparseMatrix` or a :class:`SparseValue`
    whose per-entry values are differentiable. With ``heads`` = H the dense
    operand is split into H equal column blocks and block h is multiplied by
    the h-th sparse matrix.
    """
    v = lift(v)
    if isinstance(s, SparseMatrix):
        if s.n_cols != v.shape[0]:
            raise ShapeError(f"spmm shape mismatch {s.shape} @ {v.shape}")
        m = s.scipy
        return _make(np.asarray(m @ v.data), (v,), lambda g: (np.asarray(m.T @ g),), "spmm")
    if not isinstance(s, SparseValue):
        raise TypeError("spmm expects SparseMatrix or SparseValue")
    n_rows, n_cols = s.shape
    heads = s.heads
    if n_cols != v.shape[0] or v.shape[1] % heads:
        raise ShapeError(f"spmm shape mismatch {s.shape} @ {v.shape} with {heads} heads")
    vals = s.vals
    if vals.shape != (len(s.rows), heads):
        raise ShapeError("SparseValue vals must be (nnz, heads)")
    d = v.shape[1] // heads
    mats = [sp.csr_matrix((vals.data[:, h], (s.rows, s.cols)), shape=s.shape)
            for h in range(heads)]
    out = np.concatenate([np.asarray(mats[h] @ v.data[:, h * d:(h + 1) * d])
                          for h in range(heads)], axis=1)

    def back(g):
        gv = np.concatenate([np.asarray(mats[h].T @ g[:, h * d:(h + 1) * d])
                             for h in range(heads)], axis=1)
        g3 = g.reshape(n_rows, heads, d)[s.rows]
        v3 = v.data.reshape(n_cols, heads, d)[s.cols]
        gvals = (g3 * v3).sum(axis=2)
        return gvals, gv

    return _make(out, (vals, v), back, "spmm")


# ---------------------------------------------------------------- engine

def _toposort(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, int]] = [(root, 0)]
    while stack:
        node, i = stack.pop()
        if i == 0:
            if id(node) in seen:
                continue
            seen.add(id(node))
        if i < len(node.parents):
            stack.append((node, i + 1))
            parent = node.parents[i]
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, 0))
        else:
            order.append(node)
    return order


def backward(loss: Value, params: Sequence[Value] | None = None) -> list[np.ndarray]:
    """Populate ``.grad`` of every value reachable from ``loss``.

    Returns the gradients of ``params`` (zeros for unreachable ones).
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got {loss.shape}")
    order = _toposort(loss) if loss.requires_grad else []
    for node in order:
        node.grad = np.zeros_like(node.data)
    if order:
        loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is None:
            continue
        for parent, g in zip(node.parents, node._backward(node.grad)):
            if g is not None and parent.requires_grad:
                parent.grad += g
    if params is None:
        return []
    reached = {id(node) for node in order}
    out = []
    for p in params:
        if id(p) not in reached:
            p.grad = np.zeros_like(p.data)
        out.append(p.grad)
    return out


def finite_diff_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                         h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a matrix."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """||a - b|| / max(||a||, ||b||, floor)."""
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def gradient_check(fn: Callable[..., Value], arrays: Sequence[np.ndarray], seed: int = 0,
                   h: float = 1e-6) -> list[float]:
    """Relative error between AD and central differences for each input of ``fn``.

    ``fn`` maps Values to a Value of any shape; it is contracted with a fixed
    random matrix so every output entry contributes to the checked scalar.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = None

    def scalar(vals):
        nonlocal probe
        out = fn(*vals)
        if probe is None:
            probe = np.random.default_rng(seed).standard_normal(out.shape)
        return sum(out * Value(probe))

    leaves = [Value(a, requires_grad=True) for a in arrays]
    backward(scalar(leaves), leaves)
    errs = []
    for i, leaf in enumerate(leaves):
        def f(x, i=i):
            vals = [Value(a) for a in arrays]
            vals[i] = Value(x)
            return scalar(vals).item()
        fd = finite_diff_gradient(f, arrays[i], h)
        errs.append(relative_error(leaf.grad, fd))
    return errs
