"""
Reverse-mode automatic differentiation over dense float64 arrays.

Every network in the package is built from the primitives in this module.
Operations record themselves into the ``Graph`` that is active in the current
context; outside ``with Graph():`` they only compute forward values, which is
what evaluation and sampling use.

Example:
    >>> with Graph():
    ...     x = Value([3.0, 4.0], requires_grad=True)
    ...     loss = square(x).sum()
    ...     loss.backward()
    >>> x.grad.tolist()
    [6.0, 8.0]
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional, Sequence

import numpy as np

from . import constants as _ct
from .errors import ContractError, DeterminismError, DimensionError, NumericError

logger = logging.getLogger("bigat.autodiff")

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_GRAPH: ContextVar[Optional["Graph"]] = ContextVar("bigat_active_graph", default=None)


class Value:
    """
    A float64 array that knows how it was computed.

    ``grad`` stays ``None`` until a backward pass reaches the value. Values are
    immutable after creation; only ``grad`` is ever written to.
    """

    __slots__ = ("data", "grad", "requires_grad", "graph", "node_id", "name")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.graph: Optional[Graph] = None
        self.node_id: Optional[int] = None
        self.name = name

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Value(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Value":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Value":
        """Return a constant sharing this value's data; gradients stop here."""
        return Value(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.graph is None:
            raise ContractError(
                "backward() needs a value recorded inside `with Graph():` "
                "that depends on a requires-grad input"
            )
        self.graph.backward(self)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    # operator sugar
    def __add__(self, other: Any) -> "Value":
        return add(self, other)

    def __radd__(self, other: Any) -> "Value":
        return add(other, self)

    def __sub__(self, other: Any) -> "Value":
        return sub(self, other)

    def __rsub__(self, other: Any) -> "Value":
        return sub(other, self)

    def __mul__(self, other: Any) -> "Value":
        return mul(self, other)

    def __rmul__(self, other: Any) -> "Value":
        return mul(other, self)

    def __truediv__(self, other: Any) -> "Value":
        return div(self, other)

    def __rtruediv__(self, other: Any) -> "Value":
        return div(other, self)

    def __neg__(self) -> "Value":
        return neg(self)

    def __matmul__(self, other: Any) -> "Value":
        return matmul(self, other)

    def __rmatmul__(self, other: Any) -> "Value":
        return matmul(other, self)

    def __getitem__(self, index: Any) -> "Value":
        return take(self, index)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Value":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None) -> "Value":
        return mean(self, axis=axis)

    def max(self, axis: Optional[int] = None) -> "Value":
        return reduce_max(self, axis=axis)

    def reshape(self, *shape: int) -> "Value":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass(eq=False)
class Node:
    """One recorded operation: its kind, its inputs, and how to pull gradients back."""

    node_id: int
    op: str
    inputs: tuple[Value, ...]
    output: Value
    backward: BackwardFn


@dataclass(eq=False)
class Graph:
    """
    Append-only record of operations for one forward pass.

    Inputs always precede their consumers in ``nodes``, so walking the list in
    reverse is a valid topological order. Use one fresh graph per training step;
    parameters live in the ``ParameterStore`` and outlive any graph.
    """

    nodes: list[Node] = field(default_factory=list)
    _tokens: list[Any] = field(default_factory=list, repr=False)

    def __enter__(self) -> "Graph":
        self._tokens.append(_ACTIVE_GRAPH.set(self))
        return self

    def __exit__(self, *exc_info: Any) -> None:
        _ACTIVE_GRAPH.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: tuple[Value, ...], output: Value, backward: BackwardFn) -> Node:
        for value in inputs:
            if value.graph is not None and value.graph is not self:
                raise ContractError(f"{op}: input was recorded in a different graph")
        node = Node(len(self.nodes), op, inputs, output, backward)
        self.nodes.append(node)
        output.graph = self
        output.node_id = node.node_id
        return node

    def backward(self, root: Value) -> None:
        """
        Populate ``grad`` on every requires-grad ancestor of ``root``.

        Gradients accumulate across calls; call ``zero_grad`` (or the store's
        ``zero_grad``) to reset them.
        """
        if root.data.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {root.shape}")
        if root.graph is not self or root.node_id is None:
            raise ContractError("backward root does not belong to this graph")

        pending: dict[int, np.ndarray] = {root.node_id: np.ones_like(root.data)}
        for node in reversed(self.nodes[: root.node_id + 1]):
            g = pending.pop(node.node_id, None)
            if g is None:
                continue
            node.output._accumulate(g)
            for value, input_grad in zip(node.inputs, node.backward(g)):
                if input_grad is None or not value.requires_grad:
                    continue
                if value.node_id is not None and value.graph is self:
                    previous = pending.get(value.node_id)
                    pending[value.node_id] = input_grad if previous is None else previous + input_grad
                else:
                    value._accumulate(input_grad)


def active_graph() -> Optional[Graph]:
    return _ACTIVE_GRAPH.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording, e.g. to produce detached samples inside a training step."""
    token = _ACTIVE_GRAPH.set(None)
    try:
        yield
    finally:
        _ACTIVE_GRAPH.reset(token)


def as_value(x: Any) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _emit(op: str, inputs: tuple[Value, ...], data: np.ndarray, backward: BackwardFn) -> Value:
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op}: non-finite value in forward result", op=op)
    requires_grad = any(v.requires_grad for v in inputs)
    out = Value.__new__(Value)
    out.data = data
    out.grad = None
    out.requires_grad = requires_grad
    out.graph = None
    out.node_id = None
    out.name = None
    graph = _ACTIVE_GRAPH.get()
    if graph is not None and requires_grad:
        graph.record(op, inputs, out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def _check_broadcast(op: str, a: Value, b: Value) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if long_[len(long_) - len(short):] != short:
        raise DimensionError(
            f"{op}: shapes {sa} and {sb} only broadcast along leading axes",
            op=op,
            shapes=[sa, sb],
        )


# ---------------------------------------------------------------- binary ops


def add(a: Any, b: Any) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast("add", a, b)
    return _emit(
        "add",
        (a, b),
        a.data + b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Any, b: Any) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast("sub", a, b)
    return _emit(
        "sub",
        (a, b),
        a.data - b.data,
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a: Any, b: Any) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast("mul", a, b)
    return _emit(
        "mul",
        (a, b),
        a.data * b.data,
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Any, b: Any) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast("div", a, b)
    return _emit(
        "div",
        (a, b),
        a.data / b.data,
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def matmul(a: Any, b: Any) -> Value:
    a, b = as_value(a), as_value(b)
    if b.ndim != 2 or a.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise DimensionError(
            f"matmul: cannot multiply {a.shape} by {b.shape}",
            op="matmul",
            shapes=[a.shape, b.shape],
        )

    def backward(g: np.ndarray):
        grad_a = g @ b.data.T
        grad_b = np.outer(a.data, g) if a.ndim == 1 else a.data.T @ g
        return grad_a, grad_b

    return _emit("matmul", (a, b), a.data @ b.data, backward)


# ----------------------------------------------------------- structural ops


def concat(values: Sequence[Any], axis: int = 0) -> Value:
    values = tuple(as_value(v) for v in values)
    if not values:
        raise ContractError("concat needs at least one input")
    ndim = values[0].ndim
    ax = axis % ndim if ndim else 0
    for v in values:
        if v.ndim != ndim or any(
            v.shape[d] != values[0].shape[d] for d in range(ndim) if d != ax
        ):
            raise DimensionError(
                f"concat(axis={axis}): incompatible shapes {[x.shape for x in values]}",
                op="concat",
                shapes=[x.shape for x in values],
            )
    sizes = [v.shape[ax] for v in values]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        return np.split(g, cuts, axis=ax)

    return _emit("concat", values, np.concatenate([v.data for v in values], axis=ax), backward)


def stack(values: Sequence[Any], axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    if not values:
        raise ContractError("stack needs at least one input")
    expanded = [reshape(v, v.shape[:axis] + (1,) + v.shape[axis:]) for v in values]
    return concat(expanded, axis=axis)


def take(a: Any, index: Any) -> Value:
    """Basic or fancy indexing (the ``slice`` primitive)."""
    a = as_value(a)
    try:
        out = np.array(a.data[index])
    except IndexError as exc:
        raise DimensionError(f"slice: {exc}", op="slice", shapes=[a.shape]) from exc

    parts = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def backward(g: np.ndarray):
        grad = np.zeros_like(a.data)
        if fancy:
            np.add.at(grad, index, g)
        else:
            grad[index] += g
        return (grad,)

    return _emit("slice", (a,), out, backward)


def reshape(a: Any, shape: Sequence[int]) -> Value:
    a = as_value(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(
            f"reshape: cannot reshape {a.shape} to {tuple(shape)}", op="reshape", shapes=[a.shape]
        ) from exc
    return _emit("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a: Any) -> Value:
    a = as_value(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got {a.shape}", op="transpose", shapes=[a.shape])
    return _emit("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def broadcast(a: Any, shape: Sequence[int]) -> Value:
    """Repeat ``a`` along new leading axes."""
    a = as_value(a)
    shape = tuple(shape)
    if len(shape) < a.ndim or shape[len(shape) - a.ndim:] != a.shape:
        raise DimensionError(
            f"broadcast: {a.shape} cannot broadcast to {shape} along leading axes",
            op="broadcast",
            shapes=[a.shape, shape],
        )
    return _emit(
        "broadcast",
        (a,),
        np.broadcast_to(a.data, shape).copy(),
        lambda g: (_unbroadcast(g, a.shape),),
    )


def patches(a: Any, kernel: int, stride: int) -> Value:
    """
    Extract ``kernel x kernel`` windows from an H x W x C grid (valid padding).

    Returns (H' * W', kernel * kernel * C) so a convolution becomes one matmul.
    """
    a = as_value(a)
    if a.ndim != 3:
        raise DimensionError(f"patches: expected H x W x C, got {a.shape}", op="patches", shapes=[a.shape])
    height, width, channels = a.shape
    if height < kernel or width < kernel:
        raise DimensionError(
            f"patches: grid {height}x{width} is smaller than kernel {kernel}",
            op="patches",
            shapes=[a.shape],
        )
    out_h = (height - kernel) // stride + 1
    out_w = (width - kernel) // stride + 1
    rows = (np.arange(out_h) * stride)[:, None, None, None] + np.arange(kernel)[None, None, :, None]
    cols = (np.arange(out_w) * stride)[None, :, None, None] + np.arange(kernel)[None, None, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    out = a.data[rows, cols].reshape(out_h * out_w, kernel * kernel * channels)

    def backward(g: np.ndarray):
        grad = np.zeros_like(a.data)
        np.add.at(grad, (rows, cols), g.reshape(out_h, out_w, kernel, kernel, channels))
        return (grad,)

    return _emit("patches", (a,), out, backward)


# -------------------------------------------------------------- reductions


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis: Optional[int], keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(a: Any, axis: Optional[int] = None, keepdims: bool = False) -> Value:
    a = as_value(a)
    return _emit(
        "sum",
        (a,),
        a.data.sum(axis=axis, keepdims=keepdims),
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims),),
    )


def mean(a: Any, axis: Optional[int] = None) -> Value:
    a = as_value(a)
    count = a.data.size if axis is None else a.shape[axis]
    return reduce_sum(a, axis=axis) * (1.0 / count)


def reduce_max(a: Any, axis: Optional[int] = None) -> Value:
    """Maximum along an axis; ties send the gradient to the first maximal entry."""
    a = as_value(a)
    if axis is None:
        flat = int(np.argmax(a.data))

        def backward_flat(g: np.ndarray):
            grad = np.zeros(a.data.size)
            grad[flat] = g
            return (grad.reshape(a.shape),)

        return _emit("max", (a,), a.data.reshape(-1)[flat], backward_flat)

    winners = np.expand_dims(np.argmax(a.data, axis=axis), axis)

    def backward(g: np.ndarray):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, winners, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _emit("max", (a,), np.take_along_axis(a.data, winners, axis=axis).squeeze(axis), backward)


def reduce_min(a: Any, axis: Optional[int] = None) -> Value:
    return neg(reduce_max(neg(a), axis=axis))


def l2_norm(a: Any, axis: Optional[int] = None) -> Value:
    """Euclidean norm; the gradient at the zero vector is taken as zero."""
    a = as_value(a)
    norm = np.sqrt(np.sum(a.data * a.data, axis=axis))

    def backward(g: np.ndarray):
        n = norm if axis is None else np.expand_dims(norm, axis)
        gg = g if axis is None else np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, gg * a.data / safe, 0.0),)

    return _emit("l2-norm", (a,), norm, backward)


def l1_norm(a: Any, axis: Optional[int] = None) -> Value:
    a = as_value(a)
    return _emit(
        "l1-norm",
        (a,),
        np.sum(np.abs(a.data), axis=axis),
        lambda g: (_expand_reduced(g, a.shape, axis, False) * np.sign(a.data),),
    )


# ------------------------------------------------------------ elementwise


def neg(a: Any) -> Value:
    a = as_value(a)
    return _emit("neg", (a,), -a.data, lambda g: (-g,))


def square(a: Any) -> Value:
    a = as_value(a)
    return _emit("square", (a,), a.data * a.data, lambda g: (2.0 * a.data * g,))


def exp(a: Any) -> Value:
    a = as_value(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def log(a: Any) -> Value:
    a = as_value(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _emit("log", (a,), out, lambda g: (g / a.data,))


def tanh(a: Any) -> Value:
    a = as_value(a)
    out = np.tanh(a.data)
    return _emit("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Any) -> Value:
    a = as_value(a)
    out = _sigmoid(a.data)
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def softplus(a: Any) -> Value:
    """log(1 + e^x), the building block of binary cross-entropy on logits."""
    a = as_value(a)
    return _emit("softplus", (a,), np.logaddexp(0.0, a.data), lambda g: (g * _sigmoid(a.data),))


def relu(a: Any) -> Value:
    a = as_value(a)
    return _emit("relu", (a,), np.maximum(a.data, 0.0), lambda g: (g * (a.data > 0),))


def leaky_relu(a: Any, slope: float = _ct.LEAKY_RELU_SLOPE) -> Value:
    a = as_value(a)
    return _emit(
        "leaky-relu",
        (a,),
        np.where(a.data > 0, a.data, slope * a.data),
        lambda g: (g * np.where(a.data > 0, 1.0, slope),),
    )


def elu(a: Any) -> Value:
    a = as_value(a)
    negative = np.expm1(np.minimum(a.data, 0.0))
    return _emit(
        "elu",
        (a,),
        np.where(a.data > 0, a.data, negative),
        lambda g: (g * np.where(a.data > 0, 1.0, negative + 1.0),),
    )


def softmax(a: Any, axis: int = -1) -> Value:
    a = as_value(a)
    shifted = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _emit("softmax", (a,), out, backward)


PRIMITIVES: dict[str, Callable[..., Value]] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "elementwise-mul": mul,
    "div": div,
    "concat": lambda *values, axis=0: concat(values, axis=axis),
    "slice": take,
    "reshape": reshape,
    "transpose": transpose,
    "sum": reduce_sum,
    "max": reduce_max,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "relu": relu,
    "leaky-relu": leaky_relu,
    "elu": elu,
    "softmax": softmax,
    "l2-norm": l2_norm,
    "l1-norm": l1_norm,
    "square": square,
    "broadcast": broadcast,
    "patches": patches,
}


def primitive_forward(op_kind: str, inputs: Sequence[Any], **options: Any) -> Value:
    """
    Dispatch a primitive by name.

    Example:
        >>> primitive_forward("softmax", [Value([0.0, 0.0])]).data.tolist()
        [0.5, 0.5]
    """
    try:
        fn = PRIMITIVES[op_kind]
    except KeyError:
        raise ContractError(
            f"unknown primitive '{op_kind}'; known: {', '.join(sorted(PRIMITIVES))}"
        ) from None
    return fn(*inputs, **options)


# -------------------------------------------------------- gradient checking

# evaluation round-off assumed per function value, in units of machine epsilon
_ROUNDOFF_ULPS = 64.0


@dataclass(frozen=True)
class GradientCheckReport:
    max_relative_error: float
    tolerance: float
    coordinates: tuple[int, ...]
    analytic: np.ndarray
    numeric: np.ndarray
    resolution: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance


def _evaluate_scalar(f: Callable[[Value], Value], data: np.ndarray) -> float:
    with no_grad():
        return as_value(f(Value(data))).item()


def _central_difference(f: Callable[[Value], Value], base: np.ndarray, flat: int, step: float) -> tuple[float, float]:
    """(derivative estimate, largest |f| seen) along one flat coordinate."""
    plus = base.copy().reshape(-1)
    minus = base.copy().reshape(-1)
    plus[flat] += step
    minus[flat] -= step
    f_plus = _evaluate_scalar(f, plus.reshape(base.shape))
    f_minus = _evaluate_scalar(f, minus.reshape(base.shape))
    return (f_plus - f_minus) / (2.0 * step), max(abs(f_plus), abs(f_minus))


def gradient_check(
    f: Callable[[Value], Value],
    point: Any,
    step: float = 1e-5,
    tolerance: float = 1e-5,
    *,
    coordinates: Optional[Sequence[int]] = None,
    floor: float = 1e-12,
) -> GradientCheckReport:
    """
    Compare the analytic gradient of scalar ``f`` at ``point`` with central differences.

    Per coordinate the relative error is
    ``max(|a - n| - r, 0) / max(|a|, |n|, floor)``, where ``n`` is the central
    difference with ``step`` and ``r`` is what that difference can resolve:
    the round-off of the function values over ``step`` plus the truncation
    error, estimated from a second difference at ``step / 2``.
    ``coordinates`` restricts the check to a subset of flat indices.
    """
    if step <= 0:
        raise ContractError(f"step must be positive, got {step}")
    base = np.array(point.data if isinstance(point, Value) else point, dtype=np.float64)

    with Graph():
        x = Value(base.copy(), requires_grad=True)
        out = as_value(f(x))
        if out.data.size != 1:
            raise ContractError(f"gradient_check needs a scalar function, got shape {out.shape}")
        recorded = out.item()
        if out.graph is not None:
            out.backward()
    analytic_full = np.zeros_like(base) if x.grad is None else x.grad

    first = _evaluate_scalar(f, base.copy())
    second = _evaluate_scalar(f, base.copy())
    if not (first == second == recorded):
        raise DeterminismError(
            f"function is not deterministic at the check point ({recorded!r}, {first!r}, {second!r})"
        )

    indices = tuple(range(base.size)) if coordinates is None else tuple(int(i) for i in coordinates)
    analytic = np.empty(len(indices))
    numeric = np.empty(len(indices))
    resolution = np.empty(len(indices))
    eps = np.finfo(np.float64).eps
    for slot, flat in enumerate(indices):
        full, size_full = _central_difference(f, base, flat, step)
        half, size_half = _central_difference(f, base, flat, step / 2.0)
        numeric[slot] = full
        analytic[slot] = analytic_full.reshape(-1)[flat]
        roundoff = _ROUNDOFF_ULPS * eps * max(size_full, size_half, abs(recorded)) / step
        # the O(step^2) error of ``full`` is 4/3 of its gap to the half-step estimate
        resolution[slot] = roundoff + 4.0 / 3.0 * abs(full - half)

    if indices:
        scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        excess = np.maximum(np.abs(analytic - numeric) - resolution, 0.0)
        worst = float(np.max(excess / scale))
    else:
        worst = 0.0
    logger.debug("gradient check over %d coordinates: max relative error %.3e", len(indices), worst)
    return GradientCheckReport(worst, tolerance, indices, analytic, numeric, resolution)
