"""Dense float32 arrays with define-by-run reverse-mode differentiation.

The op set is exactly what the field, renderer, and loss need: affine maps,
sigmoid/tanh/relu, elementwise product, column concatenation, exp, reshapes,
axis sums, and an exclusive cumulative sum for transmittance. Values are
float32; matrix products and reductions accumulate in float64 before casting
back, which keeps the finite-difference gradient checks stable.

Graphs are rebuilt on every forward pass. A graph may be moved between
workers between passes but is never shared during one; parallelism lives
above this module.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

DTYPE = np.float32


_BOUNDS_CACHE: dict = {}


def _open_unit_bounds(dt: np.dtype) -> tuple:
    """Largest representable values strictly inside (0,1) for dtype dt."""
    key = dt.char
    cached = _BOUNDS_CACHE.get(key)
    if cached is None:
        one = dt.type(1.0)
        zero = dt.type(0.0)
        cached = (np.nextafter(zero, one), np.nextafter(one, zero))
        _BOUNDS_CACHE[key] = cached
    return cached


class DimensionError(ValueError):
    """Operand shapes do not satisfy an op's precondition."""


class StaleGraphError(RuntimeError):
    """backward() was called twice on the same graph."""


class NumericInputError(ValueError):
    """An input that must be finite contains NaN or infinity."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    """One recorded op: its inputs and the rule that routes the output
    gradient back to them."""

    __slots__ = ("op", "inputs", "backward_fn", "used")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn
        self.used = False


class Tensor:
    """A float32 array plus an optional gradient and producing op.

    Leaves (parameters, constants) have no node. Tensors are immutable
    after creation except for gradient accumulation; `values` may be
    rebound wholesale by the optimizer between passes.
    """

    __slots__ = ("values", "grad", "node", "requires_grad", "_hi")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        # float32 unless explicitly widened (float64 graphs exist so gradient
        # checks can run the same ops against a noise-free twin)
        self.values = np.asarray(values, dtype=DTYPE if dtype is None else dtype)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.requires_grad = bool(requires_grad)
        # float64 shadow of a size-1 reduction result; reductions set it so
        # scalar readouts keep their 64-bit accumulation (the finite-difference
        # oracle needs the loss below float32 quantization noise)
        self._hi: Optional[float] = None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self._hi is not None:
            return self._hi
        return float(self.values.item())

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy(), dtype=self.values.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g.astype(self.values.dtype, copy=False)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f", op={self.node.op}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"


TensorLike = Union[Tensor, np.ndarray, float, int, list]


def as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(values, dtype=None) -> Tensor:
    return Tensor(values, requires_grad=True, dtype=dtype)


def _record(op: str, out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, inputs, backward_fn)
    return out


def _out(values: np.ndarray) -> Tensor:
    return Tensor(values, dtype=values.dtype)


def _matmul64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product accumulated in float64, result at the operand dtype."""
    dt = np.result_type(a, b)
    prod = a.astype(np.float64, copy=False) @ b.astype(np.float64, copy=False)
    return prod.astype(dt, copy=False)


def _sum64(a: np.ndarray, axis=None, keepdims=False) -> np.ndarray:
    return a.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype, copy=False)


# ------------------------------------------------------------------ ops


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """out[i,j] = sum_t x[i,t] w[t,j] + b[j], bias broadcast over rows."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.values.ndim != 2 or w.values.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"affine: x{x.shape} and W{w.shape} do not chain")
    if b.values.ndim != 1 or b.shape[0] != w.shape[1]:
        raise DimensionError(f"affine: bias{b.shape} does not match W{w.shape}")
    out = _out(_matmul64(x.values, w.values) + b.values)

    def back(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(_matmul64(g, w.values.T))
        if w.requires_grad:
            w.accumulate_grad(_matmul64(x.values.T, g))
        if b.requires_grad:
            b.accumulate_grad(_sum64(g, axis=0))

    return _record("affine", out, (x, w, b), back)


def matmul(x: Tensor, w: Tensor) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if x.values.ndim != 2 or w.values.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"matmul: x{x.shape} and W{w.shape} do not chain")
    out = _out(_matmul64(x.values, w.values))

    def back(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(_matmul64(g, w.values.T))
        if w.requires_grad:
            w.accumulate_grad(_matmul64(x.values.T, g))

    return _record("matmul", out, (x, w), back)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    v = x.values
    # exp overflow for very negative v saturates to inf -> y = 0, which the
    # open-interval clamp lifts; cheaper than the two-branch masked form
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-v))
    lo, hi = _open_unit_bounds(v.dtype)
    np.clip(y, lo, hi, out=y)
    out = _out(y)

    def back(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * y * (1.0 - y))

    return _record("sigmoid", out, (x,), back)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.values)
    _, hi = _open_unit_bounds(y.dtype)
    np.clip(y, -hi, hi, out=y)
    out = _out(y)

    def back(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * (1.0 - y * y))

    return _record("tanh", out, (x,), back)


_kink_monitor: Optional[list] = None


@contextlib.contextmanager
def record_kink_pattern(sink: list):
    """Collect every relu's active-set mask inside the block.

    Finite-difference oracles use this to detect evaluations that straddle a
    relu kink (the active set differs between the two probe points), where a
    difference quotient measures a slope mixture rather than the one-sided
    derivative the backward pass reports.
    """
    global _kink_monitor
    prev = _kink_monitor
    _kink_monitor = sink
    try:
        yield sink
    finally:
        _kink_monitor = prev


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.maximum(x.values, 0.0)
    out = _out(y)
    if _kink_monitor is not None:
        _kink_monitor.append(np.packbits((x.values > 0).reshape(-1)).tobytes())
    if not (_grad_enabled and x.requires_grad):
        return out
    mask = x.values > 0  # subgradient at 0 is 0

    def back(g: np.ndarray) -> None:
        x.accumulate_grad(g * mask)

    return _record("relu", out, (x,), back)


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None
    return fn(x)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; shapes must match exactly."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    out = _out(a.values * b.values)

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * b.values)
        if b.requires_grad:
            b.accumulate_grad(g * a.values)

    return _record("hadamard", out, (a, b), back)


mul = hadamard


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    out = _out(a.values + b.values)
    if a._hi is not None and b._hi is not None:
        out._hi = a._hi + b._hi

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _record("add", out, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")
    out = _out(a.values - b.values)

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    return _record("sub", out, (a, b), back)


def scale_shift(x: Tensor, a: float, b: float = 0.0) -> Tensor:
    """a*x + b with scalar constants."""
    x = as_tensor(x)
    out = _out(np.asarray(a * x.values + b))
    if x._hi is not None:
        out._hi = a * x._hi + b

    def back(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * a)

    return _record("scale_shift", out, (x,), back)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.values)
    out = _out(y)

    def back(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * y)

    return _record("exp", out, (x,), back)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Column concatenation of two 2-D tensors with equal row counts."""
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat: row counts differ, {a.shape} vs {b.shape}")
    out = _out(np.concatenate([a.values, b.values], axis=1))
    split = a.shape[1]

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g[:, :split])
        if b.requires_grad:
            b.accumulate_grad(g[:, split:])

    return _record("concat", out, (a, b), back)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    out = _out(x.values.reshape(shape))
    orig = x.shape

    def back(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g.reshape(orig))

    return _record("reshape", out, (x,), back)


def repeat_last(x: Tensor, k: int) -> Tensor:
    """Repeat a size-1 trailing axis k times (the one broadcast the
    renderer needs beyond bias-over-rows)."""
    x = as_tensor(x)
    if x.shape[-1] != 1:
        raise DimensionError(f"repeat_last: trailing axis of {x.shape} is not 1")
    out = _out(np.repeat(x.values, k, axis=-1))

    def back(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g.sum(axis=-1, keepdims=True, dtype=np.float64))

    return _record("repeat_last", out, (x,), back)


def tensor_sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    acc = x.values.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
    out = _out(acc.astype(x.values.dtype, copy=False))
    if out.size == 1:
        out._hi = float(acc if np.isscalar(acc) or acc.ndim == 0 else acc.item())
    shape = x.shape

    def back(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        if axis is None:
            x.accumulate_grad(np.broadcast_to(g, shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            x.accumulate_grad(np.broadcast_to(gg, shape))

    return _record("sum", out, (x,), back)


def mean(x: Tensor) -> Tensor:
    return scale_shift(tensor_sum(x), 1.0 / x.size)


def exclusive_cumsum(x: Tensor, axis: int) -> Tensor:
    """y[..., i, ...] = sum of entries strictly before i along axis."""
    x = as_tensor(x)
    inc = np.cumsum(x.values, axis=axis, dtype=np.float64)
    exc = np.zeros_like(inc)
    src = [slice(None)] * x.values.ndim
    dst = [slice(None)] * x.values.ndim
    src[axis] = slice(None, -1)
    dst[axis] = slice(1, None)
    exc[tuple(dst)] = inc[tuple(src)]
    out = _out(exc.astype(x.values.dtype, copy=False))

    def back(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        # d/dx_j = sum over i > j of g_i: reversed exclusive cumsum
        gf = np.flip(g, axis=axis)
        inc_g = np.cumsum(gf, axis=axis, dtype=np.float64)
        exc_g = np.zeros_like(inc_g)
        exc_g[tuple(dst)] = inc_g[tuple(src)]
        x.accumulate_grad(np.flip(exc_g, axis=axis))

    return _record("exclusive_cumsum", out, (x,), back)


# ------------------------------------------------------------ backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for inp in t.node.inputs:
                if id(inp) not in seen:
                    stack.append((inp, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate grads of every reachable tensor with d(loss)/d(tensor).

    The loss must be scalar (shape [] or [1]). Gradients accumulate
    additively across backward calls on disjoint graphs sharing leaves;
    a second call on the same graph raises StaleGraphError.
    """
    if loss.size != 1:
        raise DimensionError(f"backward: loss shape {loss.shape} is not scalar")
    if loss.node is not None and loss.node.used:
        raise StaleGraphError("graph already consumed by backward; re-run forward")
    loss.grad = np.ones_like(loss.values)
    for t in reversed(_topo_order(loss)):
        if t.node is None:
            continue
        if t.node.used:
            raise StaleGraphError("graph already consumed by backward; re-run forward")
        t.node.used = True
        if t.grad is not None:
            t.node.backward_fn(t.grad)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()
