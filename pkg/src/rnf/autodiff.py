"""Dense float64 tensors with reverse-mode automatic differentiation.

Gradients are recorded on an explicit per-pass tape (define-by-run): ops
append backward rules to the innermost active ``Tape`` of the current
thread, and ``backward`` replays the recorded nodes in exact reverse
order.  Each thread has its own tape stack, so independent forward
passes can run concurrently as long as each uses its own tape.

Broadcasting is deliberately limited to scalar-with-tensor and
equal-shape operands; anything richer (e.g. adding a bias row to every
row of a matrix) is an explicit op with its own backward rule.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "DimensionError",
    "Tensor",
    "Tape",
    "active_tape",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "dot",
    "elementwise",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "clip",
    "concat",
    "stack_rows",
    "slice_rows",
    "broadcast_rows",
    "transpose",
    "reshape",
    "pick",
    "sum_all",
    "add_n",
    "max_over_axis",
    "softmax",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


_LOCAL = threading.local()


def _tape_stack() -> list:
    try:
        return _LOCAL.tapes
    except AttributeError:
        _LOCAL.tapes = []
        return _LOCAL.tapes


class Tensor:
    """A dense n-dimensional array with an optional gradient buffer.

    ``data`` is always a C-contiguous float64 array.  ``grad``, when
    populated, has the same shape.  Tensors are immutable during a
    forward pass except for their grad buffers.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # keep 0-d scalars 0-d; ascontiguousarray would promote them to (1,)
        self.data = arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Append-only record of one forward pass.

    Nodes are (output tensor, backward rule) pairs in recording order;
    inputs of a node are always recorded before the node itself.
    """

    def __init__(self):
        self.nodes: list = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted: exited a tape that is not innermost")
        return False

    def backward(self, loss: "Tensor") -> None:
        backward(loss, self)


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _record(out: Tensor, rule) -> None:
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append((out, rule))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate ``grad`` on every tensor reachable from a scalar loss.

    Visits the tape's nodes in exact reverse recording order; gradients
    accumulate additively across multiple uses of the same tensor.
    """
    if tape is None:
        tape = active_tape()
    if tape is None:
        raise ValueError("backward() requires an active or explicitly passed tape")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if not tape.nodes:
        raise ValueError("backward() on an empty tape")
    loss.grad = np.ones_like(loss.data)
    for out, rule in reversed(tape.nodes):
        if out.grad is not None:
            rule(out.grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} are not scalar/equal-shape compatible")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Undo scalar broadcasting: a scalar operand receives the summed gradient.
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(g, b.data.shape))

    _record(out, rule)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(-g, b.data.shape))

    _record(out, rule)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        _accum(a, _reduce_to(g * b.data, a.data.shape))
        _accum(b, _reduce_to(g * a.data, b.data.shape))

    _record(out, rule)
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.data, a.requires_grad)

    def rule(g):
        _accum(a, -g)

    _record(out, rule)
    return out


def matmul(a, b) -> Tensor:
    """Matrix product of a (p, q) tensor with a (q, r) matrix or (q,) vector."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        if b.data.ndim == 1:
            _accum(a, np.outer(g, b.data))
            _accum(b, a.data.T @ g)
        else:
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)

    _record(out, rule)
    return out


def dot(a, b) -> Tensor:
    """Inner product of two equal-length vectors, returning a scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise DimensionError(f"dot: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        s = g.item()
        _accum(a, s * b.data)
        _accum(b, s * a.data)

    _record(out, rule)
    return out


def _unary(a: Tensor, out_data: np.ndarray, local_grad) -> Tensor:
    out = Tensor(out_data, a.requires_grad)

    def rule(g):
        _accum(a, g * local_grad())

    _record(out, rule)
    return out


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)
    return _unary(a, t, lambda: 1.0 - t * t)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # tanh form is overflow-safe for large |x|
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _unary(a, s, lambda: s * (1.0 - s))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _unary(a, out, lambda: (a.data > 0).astype(np.float64))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    e = np.exp(a.data)
    return _unary(a, e, lambda: e)


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _unary(a, np.log(a.data), lambda: 1.0 / a.data)


_ELEMENTWISE = {}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise op by name: add, mul, tanh, sigmoid or relu."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(*args)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes through strictly inside the bounds."""
    a = _as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi), a.requires_grad)

    def rule(g):
        _accum(a, g * ((a.data > lo) & (a.data < hi)))

    _record(out, rule)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate tensors along an axis; backward slices the gradient back."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    ref = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != len(ref) or any(i != axis and s[i] != ref[i] for i in range(len(ref))):
            raise DimensionError(f"concat: shape {s} incompatible with {ref} along axis {axis}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), any(t.requires_grad for t in tensors))
    offsets = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def rule(g):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            _accum(t, piece)

    _record(out, rule)
    return out


def stack_rows(tensors) -> Tensor:
    """Stack equal-length vectors into a matrix, one vector per row."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("stack_rows of an empty list")
    for t in tensors:
        if t.data.ndim != 1 or t.data.shape != tensors[0].data.shape:
            raise DimensionError(f"stack_rows: expected equal-length vectors, got {t.data.shape}")
    out = Tensor(np.stack([t.data for t in tensors]), any(t.requires_grad for t in tensors))

    def rule(g):
        for i, t in enumerate(tensors):
            _accum(t, g[i])

    _record(out, rule)
    return out


def slice_rows(a, start: int, stop: int) -> Tensor:
    """Rows start..stop-1 of a tensor, as a copy; backward scatters into place."""
    a = _as_tensor(a)
    n = a.data.shape[0]
    if not (0 <= start < stop <= n):
        raise ValueError(f"slice_rows: bad range [{start}, {stop}) for {n} rows")
    out = Tensor(a.data[start:stop].copy(), a.requires_grad)

    def rule(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[start:stop] += g

    _record(out, rule)
    return out


def broadcast_rows(a, n: int) -> Tensor:
    """Tile a vector into n identical rows; backward sums over the rows."""
    a = _as_tensor(a)
    if a.data.ndim != 1:
        raise DimensionError(f"broadcast_rows: expected a vector, got shape {a.data.shape}")
    if n < 1:
        raise ValueError("broadcast_rows: n must be positive")
    out = Tensor(np.tile(a.data, (n, 1)), a.requires_grad)

    def rule(g):
        _accum(a, g.sum(axis=0))

    _record(out, rule)
    return out


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.data.shape}")
    out = Tensor(a.data.T, a.requires_grad)

    def rule(g):
        _accum(a, g.T)

    _record(out, rule)
    return out


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise DimensionError(f"reshape: cannot view {a.data.shape} as {shape}")
    out = Tensor(a.data.reshape(shape), a.requires_grad)

    def rule(g):
        _accum(a, g.reshape(a.data.shape))

    _record(out, rule)
    return out


def pick(a, index: int) -> Tensor:
    """Single element of a vector as a scalar tensor."""
    a = _as_tensor(a)
    if a.data.ndim != 1:
        raise DimensionError(f"pick: expected a vector, got shape {a.data.shape}")
    if not (0 <= index < a.data.shape[0]):
        raise ValueError(f"pick: index {index} out of range for length {a.data.shape[0]}")
    out = Tensor(a.data[index], a.requires_grad)

    def rule(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[index] += g.item()

    _record(out, rule)
    return out


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(), a.requires_grad)

    def rule(g):
        _accum(a, np.full_like(a.data, g.item()))

    _record(out, rule)
    return out


def add_n(tensors) -> Tensor:
    """Sum of equal-shape tensors; backward hands the gradient to each term."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("add_n of an empty list")
    for t in tensors[1:]:
        if t.data.shape != tensors[0].data.shape:
            raise DimensionError(f"add_n: shapes {t.data.shape} and {tensors[0].data.shape} differ")
    total = tensors[0].data.copy()
    for t in tensors[1:]:
        total += t.data
    out = Tensor(total, any(t.requires_grad for t in tensors))

    def rule(g):
        for t in tensors:
            _accum(t, g)

    _record(out, rule)
    return out


def max_over_axis(a, axis: int) -> tuple[Tensor, np.ndarray]:
    """Max reduction along an axis, plus the argmax indices.

    Ties resolve to the lowest index; backward routes the gradient only
    to the argmax positions.
    """
    a = _as_tensor(a)
    if a.data.ndim == 0 or a.data.shape[axis] == 0:
        raise ValueError(f"max_over_axis: empty axis {axis} for shape {a.data.shape}")
    values = a.data.max(axis=axis)
    indices = a.data.argmax(axis=axis)
    out = Tensor(values, a.requires_grad)

    def rule(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        scatter = np.zeros_like(a.data)
        np.put_along_axis(scatter, np.expand_dims(indices, axis), np.expand_dims(g, axis), axis)
        a.grad += scatter

    _record(out, rule)
    return out, indices


def softmax(a) -> Tensor:
    """Softmax of a vector, shifted by the max for stability."""
    a = _as_tensor(a)
    if a.data.ndim != 1:
        raise DimensionError(f"softmax: expected a vector, got shape {a.data.shape}")
    z = a.data - a.data.max()
    e = np.exp(z)
    p = e / e.sum()
    out = Tensor(p, a.requires_grad)

    def rule(g):
        _accum(a, p * (g - float(g @ p)))

    _record(out, rule)
    return out


_ELEMENTWISE.update({"add": add, "mul": mul, "tanh": tanh, "sigmoid": sigmoid, "relu": relu})
