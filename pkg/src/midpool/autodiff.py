"""Dense 2-D reverse-mode autodiff engine and Adam optimizer.

Every tensor is a row-major float64 matrix. Operations record a dynamic
tape (define-by-run); ``backward`` walks it in reverse topological order
with pass-local adjoints, then adds them into each tensor's ``grad``, so
calling ``backward`` twice without zeroing doubles the gradients.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class DimensionError(ShapeError):
    pass


class IndexOutOfRangeError(IndexError):
    pass


class Tensor:
    """A 2-D float64 array plus its gradient buffer and tape linkage."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "_adjoint")

    def __init__(self, value, requires_grad=False, _parents=(), _backward=None):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.value = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._adjoint = None

    @property
    def shape(self):
        return self.value.shape

    def ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        return self.grad

    def zero_grad(self):
        self.grad = None

    def item(self):
        if self.value.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.value[0, 0])

    def detach(self):
        return Tensor(self.value.copy())

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other))

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return apply_unary(self, "neg")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward_fn):
    if any(t.requires_grad for t in parents):
        out = Tensor(value, requires_grad=True, _parents=tuple(parents),
                     _backward=backward_fn)
        return out
    return Tensor(value)


def _accum(t: Tensor, delta):
    """Add a contribution to a tensor's pass-local adjoint."""
    if not t.requires_grad:
        return
    if t._adjoint is None:
        t._adjoint = np.zeros_like(t.value)
    t._adjoint += delta


def _unbroadcast(grad, shape):
    """Reduce a gradient back to the (possibly broadcast) operand shape."""
    for axis in (0, 1):
        if shape[axis] == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} vs {b.shape}")

    def backward(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    return _make(a.value @ b.value, (a, b), backward)


def _broadcast_check(a, b, opname):
    for axis in (0, 1):
        da, db = a.shape[axis], b.shape[axis]
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{opname}: incompatible shapes {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "add")

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.value + b.value, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "sub")

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, -_unbroadcast(g, b.shape))

    return _make(a.value - b.value, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with row/column broadcasting."""
    _broadcast_check(a, b, "mul")

    def backward(g):
        _accum(a, _unbroadcast(g * b.value, a.shape))
        _accum(b, _unbroadcast(g * a.value, b.shape))

    return _make(a.value * b.value, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "div")

    def backward(g):
        _accum(a, _unbroadcast(g / b.value, a.shape))
        _accum(b, _unbroadcast(-g * a.value / (b.value**2), b.shape))

    return _make(a.value / b.value, (a, b), backward)


def scale(x: Tensor, k: float) -> Tensor:
    def backward(g):
        _accum(x, k * g)

    return _make(x.value * k, (x,), backward)


_UNARY = {
    "abs": (np.abs, lambda v, o: np.sign(v)),  # sign(0)=0: subgradient at 0
    "tanh": (np.tanh, lambda v, o: 1.0 - o**2),
    "sigmoid": (
        lambda v: np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                           np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v)))),
        lambda v, o: o * (1.0 - o),
    ),
    "relu": (lambda v: np.maximum(v, 0.0), lambda v, o: (v > 0).astype(np.float64)),
    "neg": (np.negative, lambda v, o: -np.ones_like(v)),
    "sqrt": (np.sqrt, lambda v, o: 0.5 / o),
}


def apply_unary(x: Tensor, kind: str) -> Tensor:
    if kind not in _UNARY:
        raise ValueError(f"unknown unary op {kind!r}")
    fwd, deriv = _UNARY[kind]
    out_val = fwd(x.value)

    def backward(g):
        _accum(x, g * deriv(x.value, out_val))

    return _make(out_val, (x,), backward)


def gather_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexOutOfRangeError(f"gather_rows index out of [0, {n})")

    def backward(g):
        delta = np.zeros_like(x.value)
        np.add.at(delta, idx, g)
        _accum(x, delta)

    return _make(x.value[idx], (x,), backward)


def scatter_rows(x: Tensor, idx, target_rows: int) -> Tensor:
    """Place rows of x at positions idx in a zero matrix (graph u-net unpool)."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= target_rows):
        raise IndexOutOfRangeError(f"scatter_rows index out of [0, {target_rows})")
    if idx.size != x.shape[0]:
        raise DimensionError(f"scatter_rows: {idx.size} indices for {x.shape[0]} rows")
    out_val = np.zeros((target_rows, x.shape[1]))
    out_val[idx] = x.value

    def backward(g):
        _accum(x, g[idx])

    return _make(out_val, (x,), backward)


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise DimensionError(f"concat_cols row mismatch: {p.shape[0]} vs {rows}")
    out_val = np.concatenate([p.value for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[:, lo:hi])

    return _make(out_val, tuple(parts), backward)


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    if not (0 <= lo < hi <= x.shape[1]):
        raise IndexOutOfRangeError(f"slice_cols [{lo}, {hi}) out of width {x.shape[1]}")

    def backward(g):
        delta = np.zeros_like(x.value)
        delta[:, lo:hi] = g
        _accum(x, delta)

    return _make(x.value[:, lo:hi], (x,), backward)


def reduce(x: Tensor, axis: str, kind: str) -> Tensor:
    """Reduce over 'rows' (output 1xc) or 'cols' (output nx1).

    Max routes its gradient to the first maximal element per slice.
    """
    if x.value.size == 0:
        raise ShapeError("reduce on empty tensor")
    ax = {"rows": 0, "cols": 1}[axis]
    if kind == "sum":
        out_val = x.value.sum(axis=ax, keepdims=True)
    elif kind == "mean":
        out_val = x.value.mean(axis=ax, keepdims=True)
    elif kind == "max":
        out_val = x.value.max(axis=ax, keepdims=True)
        argmax = x.value.argmax(axis=ax)  # first max wins ties
    else:
        raise ValueError(f"unknown reduction {kind!r}")

    def backward(g):
        if kind == "sum":
            delta = np.broadcast_to(g, x.shape).copy()
        elif kind == "mean":
            delta = np.broadcast_to(g, x.shape) / x.shape[ax]
        else:
            delta = np.zeros_like(x.value)
            if ax == 0:
                delta[argmax, np.arange(x.shape[1])] = g[0]
            else:
                delta[np.arange(x.shape[0]), argmax] = g[:, 0]
        _accum(x, delta)

    return _make(out_val, (x,), backward)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Negative log softmax probability of the given class, max-shifted."""
    if logits.shape[0] != 1 or logits.shape[1] < 2:
        raise ShapeError(f"cross_entropy expects 1xC logits with C>=2, got {logits.shape}")
    c = logits.shape[1]
    if not 0 <= label < c:
        raise IndexOutOfRangeError(f"label {label} out of [0, {c})")
    z = logits.value[0]
    shifted = z - z.max()
    logsumexp = np.log(np.exp(shifted).sum())
    loss = logsumexp - shifted[label]
    softmax = np.exp(shifted - logsumexp)

    def backward(g):
        grad = softmax.copy()
        grad[label] -= 1.0
        _accum(logits, g[0, 0] * grad[None, :])

    return _make(np.array([[loss]]), (logits,), backward)


def softmax_probs(logits: Tensor) -> np.ndarray:
    """Detached softmax of 1xC logits (for diagnostics/metrics)."""
    z = logits.value[0]
    e = np.exp(z - z.max())
    return e / e.sum()


def backward(root: Tensor):
    """Accumulate gradients of root into every reachable requires-grad tensor.

    Adjoints are local to this call; each call contributes exactly one unit
    of root gradient.
    """
    if root.value.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
    topo: list[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root._adjoint = np.ones_like(root.value)
    for node in reversed(topo):
        if node._backward is not None and node._adjoint is not None:
            node._backward(node._adjoint)
    for node in topo:
        if node._adjoint is not None:
            node.ensure_grad()
            node.grad += node._adjoint
            node._adjoint = None


class Adam:
    """Adam with bias correction and decoupled weight decay.

    ``step`` applies the decay before the moment update, then zeroes the
    parameter gradients.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if g.shape != self.m[i].shape:
                raise ShapeError(f"adam state shape {self.m[i].shape} vs grad {g.shape}")
            if self.weight_decay:
                p.value -= self.lr * self.weight_decay * p.value
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g**2
            m_hat = self.m[i] / (1 - self.beta1**self.t)
            v_hat = self.v[i] / (1 - self.beta2**self.t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.zero_grad()

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
