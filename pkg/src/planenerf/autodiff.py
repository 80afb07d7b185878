"""Reverse-mode automatic differentiation on dense numpy arrays.

Graphs are built define-by-run: every operation on `Tensor`s records its
inputs and a vector-Jacobian closure, so the resulting DAG of tensors is
the computation graph and `backward` walks it in reverse topological
order. Training runs in float32; gradient-check code builds float64
graphs (finite differences are unreliable in single precision).

Gradients accumulate additively when a node fans out. Values are expected
to stay finite; `set_check_finite(True)` validates every op output and
every gradient, and training always validates losses and parameter
gradients via `assert_all_finite`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_CHECK_FINITE = False


class NonFiniteError(RuntimeError):
    """A forward value or gradient contains NaN/Inf."""


def set_check_finite(enabled: bool) -> None:
    """Toggle per-op finiteness validation (slow; meant for tests/debugging)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def assert_all_finite(data: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values in {context}")


class Tensor:
    """A dense array node in the computation graph.

    Leaves are created directly; interior nodes are created by ops and
    carry `_parents` plus a `_vjp` closure mapping the output gradient to
    per-parent gradients. Data is treated as immutable once the tensor
    participates in a graph; parameter updates happen between graphs.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    __float__ = item

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- operators ----------------------------------------------------------

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    # -- backward -----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into `.grad` of every reachable tensor.

        `self` must be scalar (one element) and the forward values must
        already exist (define-by-run guarantees this).
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar output, got shape {self.data.shape}")
        order = topological_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            parent_grads = node._vjp(node.grad)
            for parent, pgrad in zip(node._parents, parent_grads):
                if pgrad is None or not parent.requires_grad:
                    continue
                if _CHECK_FINITE:
                    assert_all_finite(pgrad, "gradient")
                if parent.grad is None:
                    parent.grad = pgrad.copy() if pgrad is parent.data else np.asarray(pgrad)
                else:
                    parent.grad = parent.grad + pgrad


def make_node(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable[[np.ndarray], tuple]) -> Tensor:
    """Wrap an op result as a graph node. Used by ops here and by custom
    ops elsewhere (grid interpolation)."""
    if _CHECK_FINITE:
        assert_all_finite(data, "forward op output")
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def topological_order(output: Tensor) -> list[Tensor]:
    """Nodes reachable from `output`, every node after all of its parents."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def gradients(output: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar `output` w.r.t. `leaves`; zero arrays for
    leaves the graph never touches."""
    for leaf in leaves:
        leaf.grad = None
    output.backward()
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# -- helpers ------------------------------------------------------------------


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _split_scalar(a, b):
    """Keep Python scalars out of the graph so numpy's weak promotion
    preserves the graph dtype; returns (tensor operand, scalar or tensor)."""
    if isinstance(b, (int, float)) or (np.isscalar(b) and not isinstance(b, np.ndarray)):
        return _as_tensor(a), float(b)
    return _as_tensor(a), _as_tensor(b)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise binary ops ----------------------------------------------------


def add(a, b) -> Tensor:
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        a, b = b, a
    a, b = _split_scalar(a, b)
    if isinstance(b, float):
        return make_node(a.data + b, (a,), lambda g: (g,))
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return make_node(data, (a, b), vjp)


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        return add(neg(b), a)
    a, b = _split_scalar(a, b)
    if isinstance(b, float):
        return make_node(a.data - b, (a,), lambda g: (g,))
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return make_node(data, (a, b), vjp)


def mul(a, b) -> Tensor:
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        a, b = b, a
    a, b = _split_scalar(a, b)
    if isinstance(b, float):
        return make_node(a.data * b, (a,), lambda g: (g * b,))
    data = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return make_node(data, (a, b), vjp)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


# -- matmul / reductions / shaping ----------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def vjp(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return make_node(data, (a, b), vjp)


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).astype(a.data.dtype, copy=True),)

    return make_node(data, (a,), vjp)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, *shape) -> Tensor:
    a = _as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.data.shape
    data = a.data.reshape(shape)
    return make_node(data, (a,), lambda g: (g.reshape(old),))


def take(a, idx) -> Tensor:
    """Basic (slice/int) indexing. Fancy integer-array indexing is not
    part of the graph op set; gathers go through the grid kernels."""
    a = _as_tensor(a)
    data = a.data[idx]

    def vjp(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)

    return make_node(data, (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(lo), int(hi))
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return make_node(data, tensors, vjp)


def exclusive_cumsum(a, axis: int = -1) -> Tensor:
    """out[..., i] = sum of a[..., j] for j < i (zero in the first slot)."""
    a = _as_tensor(a)
    inc = np.cumsum(a.data, axis=axis)
    data = np.zeros_like(a.data)
    head = [slice(None)] * a.data.ndim
    head[axis] = slice(1, None)
    tail = [slice(None)] * a.data.ndim
    tail[axis] = slice(None, -1)
    data[tuple(head)] = inc[tuple(tail)]

    def vjp(g):
        # adjoint: suffix sum excluding the diagonal term
        rev = np.flip(g, axis=axis)
        suf = np.cumsum(rev, axis=axis)
        suf = np.flip(suf, axis=axis)
        out = np.zeros_like(g)
        out[tuple(tail)] = suf[tuple(head)]
        return (out,)

    return make_node(data, (a,), vjp)


# -- elementwise nonlinearities --------------------------------------------------


def exp(a) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)
    return make_node(data, (a,), lambda g: (g * data,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)
    return make_node(data, (a,), lambda g: (g / a.data,))


def sin(a) -> Tensor:
    a = _as_tensor(a)
    return make_node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = _as_tensor(a)
    return make_node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0)
    return make_node(data, (a,), lambda g: (g * (a.data > 0),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable in both tails: never exponentiates a positive argument
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = _sigmoid(a.data)
    return make_node(data, (a,), lambda g: (g * data * (1.0 - data),))


def softplus(a) -> Tensor:
    """ln(1 + e^x), computed as max(x, 0) + log1p(e^-|x|) so large density
    logits cannot overflow."""
    a = _as_tensor(a)
    x = a.data
    data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return make_node(data, (a,), lambda g: (g * _sigmoid(x),))
