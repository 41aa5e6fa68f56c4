"""Dense float64 tensors with tape-free reverse-mode differentiation.

Every op records its parents and a backward closure. Backward closures are
themselves written in terms of :class:`Tensor` ops, so running the reverse
pass with ``create_graph=True`` yields gradients that can be differentiated
again (needed by the gradient penalty). A handful of ops use raw numpy in
their backward for speed; those are marked ``first_order`` and refuse to take
part in a graph-building reverse pass.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class DoubleBackwardError(RuntimeError):
    """Raised when a first-order-only op is hit while building a grad graph."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = enabled
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "first_order")
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.first_order = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators ----------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- method forms of common ops ----------------------------------------
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def tanh(self):
        return tanh(self)

    def square(self):
        return square(self)

    def backward(self, grad=None, create_graph: bool = False) -> None:
        backward(self, grad, create_graph=create_graph)


def _raise_item(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str,
          first_order: bool = False) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
        out.first_order = first_order
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers

def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``x`` down to ``shape`` (the inverse of numpy broadcasting)."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    data = data.reshape(shape)
    return _make(data, (x,), lambda g: (broadcast_to(g, x.shape),), "sum_to")


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.broadcast_to(x.data, shape).copy()
    return _make(data, (x,), lambda g: (sum_to(g, x.shape),), "broadcast_to")


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (sum_to(g, a.shape), sum_to(neg(g), b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        ga = sum_to(g * b, a.shape) if a.requires_grad else None
        gb = sum_to(g * a, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)

    def bw(g):
        ga = sum_to(g / b, a.shape) if a.requires_grad else None
        gb = sum_to(neg(g) * a / (b * b), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data / b.data, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (neg(g),), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(exponent, Tensor):
        raise TypeError("power: only scalar exponents are supported")
    p = float(exponent)
    if p == 2.0:
        return square(a)
    return _make(a.data ** p, (a,), lambda g: (g * (p * power(a, p - 1.0)),), "pow")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (g * (2.0 * a),), "square")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def bw(g):
        return (g * out,)

    out = _make(np.exp(a.data), (a,), bw, "exp")
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def bw(g):
        return (g / (2.0 * out),)

    out = _make(np.sqrt(a.data), (a,), bw, "sqrt")
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def bw(g):
        return (g * (1.0 - square(out)),)

    out = _make(np.tanh(a.data), (a,), bw, "tanh")
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = np.empty_like(a.data)
    pos = a.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ea = np.exp(a.data[~pos])
    data[~pos] = ea / (1.0 + ea)
    out = None

    def bw(g):
        return (g * (out * (1.0 - out)),)

    out = _make(data, (a,), bw, "sigmoid")
    return out


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed without overflow."""
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    return _make(data, (a,), lambda g: (g * sigmoid(a),), "softplus")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def silu(a) -> Tensor:
    a = as_tensor(a)
    return a * sigmoid(a)


def abs_(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


# ---------------------------------------------------------------------------
# reductions and shape ops

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    kept_shape = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def bw(g):
        return (broadcast_to(reshape(g, kept_shape), a.shape),)

    return _make(data, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return sum_(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make(data, (a,), lambda g: (reshape(g, a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (transpose(g, inverse),), "transpose")


def swap_last(a) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    data = a.data[index]
    if not _is_basic_index(index):
        data = data.copy()
    return _make(data, (a,), lambda g: (scatter(g, a.shape, index),), "getitem")


def scatter(values, shape: tuple[int, ...], index) -> Tensor:
    """Zeros of ``shape`` with ``values`` added at ``index`` (adjoint of getitem)."""
    values = as_tensor(values)
    data = np.zeros(shape)
    if _is_basic_index(index):
        data[index] = values.data
    else:
        np.add.at(data, index, values.data)
    return _make(data, (values,), lambda g: (getitem(g, index),), "scatter")


def pad(a, pad_width: Sequence[tuple[int, int]]) -> Tensor:
    """Zero-pad; ``pad_width`` has one (before, after) pair per axis."""
    a = as_tensor(a)
    if all(p == (0, 0) for p in pad_width):
        return a
    shape = tuple(s + lo + hi for s, (lo, hi) in zip(a.shape, pad_width))
    index = tuple(slice(lo, lo + s) for s, (lo, _) in zip(a.shape, pad_width))
    return scatter(a, shape, index)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(f"concat: incompatible shapes {[x.shape for x in tensors]} on axis {axis}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * ndim
            idx[axis] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    return _make(data, tensors, bw, "concat")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ga = sum_to(matmul(g, swap_last(b)), a.shape) if a.requires_grad else None
        gb = sum_to(matmul(swap_last(a), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), bw, "matmul")


def unfold1d(a, kernel: int, stride: int = 1) -> Tensor:
    """Sliding windows of the last axis: (B, C, L) -> (B, C, L_out, K)."""
    a = as_tensor(a)
    L = a.shape[-1]
    L_out = (L - kernel) // stride + 1
    if L_out < 1:
        raise ShapeError(f"unfold1d: length {L} shorter than kernel {kernel}")
    win = np.lib.stride_tricks.sliding_window_view(a.data, kernel, axis=-1)[..., ::stride, :]
    return _make(np.ascontiguousarray(win), (a,), lambda g: (fold1d(g, L, stride),), "unfold1d")


def fold1d(cols, length: int, stride: int = 1) -> Tensor:
    """Adjoint of :func:`unfold1d`: overlap-add windows back onto a length-``length`` axis."""
    cols = as_tensor(cols)
    *lead, L_out, K = cols.shape
    data = np.zeros(tuple(lead) + (length,))
    for k in range(K):
        data[..., k:k + stride * (L_out - 1) + 1:stride] += cols.data[..., k]
    return _make(data, (cols,), lambda g: (unfold1d(g, K, stride),), "fold1d")


def unfold2d(a, kh: int, kw: int) -> Tensor:
    """Stride-1 patches: (B, C, H, W) -> (B, C, H_out, W_out, KH, KW)."""
    a = as_tensor(a)
    H, W = a.shape[-2:]
    if H < kh or W < kw:
        raise ShapeError(f"unfold2d: input {a.shape} smaller than kernel {(kh, kw)}")
    win = np.lib.stride_tricks.sliding_window_view(a.data, (kh, kw), axis=(-2, -1))
    return _make(np.ascontiguousarray(win), (a,), lambda g: (fold2d(g, H, W),), "unfold2d")


def fold2d(cols, height: int, width: int) -> Tensor:
    cols = as_tensor(cols)
    *lead, Ho, Wo, KH, KW = cols.shape
    data = np.zeros(tuple(lead) + (height, width))
    for i in range(KH):
        for j in range(KW):
            data[..., i:i + Ho, j:j + Wo] += cols.data[..., i, j]
    return _make(data, (cols,), lambda g: (unfold2d(g, KH, KW),), "fold2d")


def max_pool1d(a, size: int = 2) -> Tensor:
    """Non-overlapping max pooling over the last axis. First-order only."""
    a = as_tensor(a)
    B, C, L = a.shape
    if L % size:
        raise ShapeError(f"max_pool1d: length {L} not divisible by {size}")
    blocks = a.data.reshape(B, C, L // size, size)
    arg = blocks.argmax(axis=-1)
    data = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    onehot = np.zeros_like(blocks)
    np.put_along_axis(onehot, arg[..., None], 1.0, axis=-1)

    def bw(g):
        return (Tensor((onehot * g.data[..., None]).reshape(B, C, L)),)

    return _make(data, (a,), bw, "max_pool1d", first_order=True)


# ---------------------------------------------------------------------------
# reverse pass

def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _run(root: Tensor, seed: Tensor, create_graph: bool) -> dict[int, Tensor]:
    grads: dict[int, Tensor] = {id(root): seed}
    order = _topo_order(root)
    with _grad_mode(create_graph):
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            if create_graph and node.first_order:
                raise DoubleBackwardError(
                    f"op '{node.op}' has no differentiable backward; cannot build a gradient graph"
                )
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
    return grads


def _seed(out: Tensor, grad) -> Tensor:
    if grad is None:
        if out.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {out.shape}")
        return Tensor(np.ones_like(out.data))
    grad = as_tensor(grad)
    if grad.shape != out.shape:
        raise ShapeError(f"backward: grad shape {grad.shape} does not match output {out.shape}")
    return grad


def backward(loss: Tensor, grad=None, create_graph: bool = False) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Repeated calls accumulate; call ``zero_grad`` on parameters between steps.
    """
    if not loss.requires_grad:
        return
    grads = _run(loss, _seed(loss, grad), create_graph)
    for node in _topo_order(loss):
        if node.is_leaf and id(node) in grads:
            g = grads[id(node)].data
            node.grad = g.copy() if node.grad is None else node.grad + g


def grad(output: Tensor, inputs: Iterable[Tensor], grad_output=None,
         create_graph: bool = False) -> list[Tensor]:
    """Return d(output)/d(input) for each input without touching ``.grad``.

    Unreached inputs get a zero tensor. With ``create_graph`` the returned
    tensors are themselves differentiable.
    """
    inputs = list(inputs)
    if not output.requires_grad:
        return [Tensor(np.zeros_like(x.data)) for x in inputs]
    grads = _run(output, _seed(output, grad_output), create_graph)
    result = []
    for x in inputs:
        g = grads.get(id(x))
        result.append(Tensor(np.zeros_like(x.data)) if g is None else g)
    return result
