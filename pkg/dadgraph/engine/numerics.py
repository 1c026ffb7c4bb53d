# dadgraph/engine/numerics.py
"""
Dense float64 tensors with reverse-mode gradients.

A Tape is created per forward pass. Every op goes through ``Tape.apply``, which runs the
op's forward on plain numpy arrays and records a node holding the op instance (its saved
context) and the ids of its inputs. ``backward`` walks the nodes in reverse id order, which
is a valid reverse topological order because a node can only consume earlier nodes.

There is no broadcasting: binary element-wise ops require identical shapes.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type

import numpy as np

from .errors import NonFiniteError, ShapeError, TapeError, UnknownOpError

DTYPE = np.float64


class Tensor:
    __slots__ = ("values", "grad_required", "name", "node_id", "_tape")

    def __init__(self, values: Any, grad_required: bool = False, name: Optional[str] = None) -> None:
        arr = np.array(values, dtype=DTYPE)
        if any(d == 0 for d in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got shape {arr.shape}")
        self.values = arr
        self.grad_required = grad_required
        self.name = name
        self.node_id: Optional[int] = None
        self._tape: Optional["Tape"] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, grad_required: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.values = arr
        t.grad_required = grad_required
        t.name = None
        t.node_id = None
        t._tape = None
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single value, shape is {self.shape}")
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, grad_required={self.grad_required})"


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

class Function:
    """One recorded op. ``forward`` may stash whatever ``backward`` needs on ``self``."""

    name = "function"

    def forward(self, *xs: np.ndarray, **attrs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError


def _same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape} (no broadcasting)")


def _check_axis(op: str, x: np.ndarray, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"{op}: axis {axis} invalid for shape {x.shape}")
    return axis % x.ndim


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class Add(Function):
    name = "add"

    def forward(self, a, b):
        _same_shape(self.name, a, b)
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        _same_shape(self.name, a, b)
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _same_shape(self.name, a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Neg(Function):
    name = "neg"

    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x):
        # tanh form never overflows
        self.out = 0.5 * (np.tanh(0.5 * x) + 1.0)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(Function):
    name = "tanh"

    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


class Relu(Function):
    name = "relu"

    def forward(self, x):
        self.mask = x > 0.0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (np.where(self.mask, grad, 0.0),)


ELEMENTWISE: Dict[str, Type[Function]] = {
    "add": Add,
    "sub": Sub,
    "mul": Mul,
    "neg": Neg,
    "sigmoid": Sigmoid,
    "tanh": Tanh,
    "relu": Relu,
}
BINARY_KINDS = frozenset({"add", "sub", "mul"})
ACTIVATIONS = ("sigmoid", "tanh", "relu")


class Softmax(Function):
    name = "softmax"

    def forward(self, x, axis=-1):
        self.axis = _check_axis(self.name, x, axis)
        z = x - np.max(x, axis=self.axis, keepdims=True)
        e = np.exp(z)
        self.out = e / np.sum(e, axis=self.axis, keepdims=True)
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - np.sum(grad * s, axis=self.axis, keepdims=True)),)


class LogSoftmax(Function):
    name = "log_softmax"

    def forward(self, x, axis=-1):
        self.axis = _check_axis(self.name, x, axis)
        z = x - np.max(x, axis=self.axis, keepdims=True)
        out = z - np.log(np.sum(np.exp(z), axis=self.axis, keepdims=True))
        self.soft = np.exp(out)
        return out

    def backward(self, grad):
        return (grad - self.soft * np.sum(grad, axis=self.axis, keepdims=True),)


class Concat(Function):
    name = "concat"

    def forward(self, a, b, axis=0):
        if a.ndim != b.ndim:
            raise ShapeError(f"concat: rank mismatch {a.shape} vs {b.shape}")
        self.axis = _check_axis(self.name, a, axis)
        for d in range(a.ndim):
            if d != self.axis and a.shape[d] != b.shape[d]:
                raise ShapeError(f"concat: incompatible shapes {a.shape} and {b.shape} on axis {self.axis}")
        self.split = a.shape[self.axis]
        return np.concatenate([a, b], axis=self.axis)

    def backward(self, grad):
        ga, gb = np.split(grad, [self.split], axis=self.axis)
        return ga, gb


class Stack(Function):
    name = "stack"

    def forward(self, *xs, axis=0):
        for x in xs[1:]:
            _same_shape(self.name, xs[0], x)
        self.axis = axis
        self.count = len(xs)
        return np.stack(xs, axis=axis)

    def backward(self, grad):
        return tuple(np.take(grad, i, axis=self.axis) for i in range(self.count))


class Sum(Function):
    name = "sum"

    def forward(self, x):
        self.shape = x.shape
        return np.asarray(np.sum(x))

    def backward(self, grad):
        return (np.full(self.shape, float(grad)),)


class Mean(Function):
    name = "mean"

    def forward(self, x):
        self.shape = x.shape
        return np.asarray(np.sum(x) / x.size)

    def backward(self, grad):
        return (np.full(self.shape, float(grad) / np.prod(self.shape)),)


class Dot(Function):
    name = "dot"

    def forward(self, x, y):
        if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
            raise ShapeError(f"dot: length mismatch {x.shape} vs {y.shape}")
        self.x, self.y = x, y
        return np.asarray(np.dot(x, y))

    def backward(self, grad):
        g = float(grad)
        return g * self.y, g * self.x


class MaxWithArgmax(Function):
    name = "max_with_argmax"

    def forward(self, x):
        self.shape = x.shape
        # first occurrence wins on ties
        self.index = int(np.argmax(x.reshape(-1)))
        return np.asarray(x.reshape(-1)[self.index])

    def backward(self, grad):
        out = np.zeros(int(np.prod(self.shape)))
        out[self.index] = float(grad)
        return (out.reshape(self.shape),)


REDUCTIONS: Dict[str, Type[Function]] = {
    "sum": Sum,
    "mean": Mean,
    "dot": Dot,
    "max_with_argmax": MaxWithArgmax,
}


class Take(Function):
    name = "take"

    def forward(self, x, indices=(), axis=0):
        self.axis = _check_axis(self.name, x, axis)
        self.shape = x.shape
        self.indices = np.asarray(indices, dtype=np.int64)
        n = x.shape[self.axis]
        if self.indices.size == 0 or self.indices.min() < -n or self.indices.max() >= n:
            raise ShapeError(f"take: indices {list(self.indices)} out of range for axis of size {n}")
        return np.take(x, self.indices, axis=self.axis)

    def backward(self, grad):
        out = np.zeros(self.shape)
        moved = np.moveaxis(out, self.axis, 0)
        np.add.at(moved, self.indices, np.moveaxis(grad, self.axis, 0))
        return (out,)


class Transpose(Function):
    name = "transpose"

    def forward(self, x):
        if x.ndim != 2:
            raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
        return x.T.copy()

    def backward(self, grad):
        return (grad.T.copy(),)


class Reshape(Function):
    name = "reshape"

    def forward(self, x, shape=()):
        if int(np.prod(shape)) != x.size:
            raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}")
        self.shape = x.shape
        return x.reshape(shape).copy()

    def backward(self, grad):
        return (grad.reshape(self.shape),)


OPS: Dict[str, Type[Function]] = {
    cls.name: cls
    for cls in (MatMul, *ELEMENTWISE.values(), Softmax, LogSoftmax, Concat, Stack,
                *REDUCTIONS.values(), Take, Transpose, Reshape)
}


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

@dataclass
class Node:
    node_id: int
    op: str
    inputs: Tuple[int, ...]
    output: Tensor
    ctx: Optional[Function] = None
    attrs: Dict[str, Any] = field(default_factory=dict)


class Tape:
    """Ordered record of one forward pass. Never share a tape between threads."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self._leaf_ids: Dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    # --- recording ---
    def _id_of(self, t: Tensor) -> int:
        if not isinstance(t, Tensor):
            raise TypeError(f"expected Tensor, got {type(t).__name__}")
        if t._tape is self:
            return t.node_id  # type: ignore[return-value]
        key = id(t)
        if key not in self._leaf_ids:
            nid = len(self.nodes)
            self.nodes.append(Node(nid, "leaf", (), t))
            self._leaf_ids[key] = nid
        return self._leaf_ids[key]

    def apply(self, fn: Type[Function], *inputs: Tensor, **attrs: Any) -> Tensor:
        ids = tuple(self._id_of(t) for t in inputs)
        ctx = fn()
        out = ctx.forward(*[t.values for t in inputs], **attrs)
        if not np.all(np.isfinite(out)) and all(np.all(np.isfinite(t.values)) for t in inputs):
            raise NonFiniteError(f"{fn.name} produced non-finite values from finite inputs")
        result = Tensor._wrap(np.asarray(out, dtype=DTYPE), any(t.grad_required for t in inputs))
        result.node_id = len(self.nodes)
        result._tape = self
        self.nodes.append(Node(result.node_id, fn.name, ids, result, ctx, dict(attrs)))
        return result

    def constant(self, values: Any) -> Tensor:
        t = Tensor(values)
        self._id_of(t)
        return t

    def replay(self) -> List[np.ndarray]:
        """Recompute every node from the current leaf values, in recorded order."""
        outs: List[np.ndarray] = []
        for node in self.nodes:
            if node.ctx is None:
                outs.append(node.output.values.copy())
                continue
            args = [outs[i] for i in node.inputs]
            outs.append(np.asarray(OPS[node.op]().forward(*args, **node.attrs), dtype=DTYPE))
        return outs

    # --- op surface ---
    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        return self.apply(MatMul, a, b)

    def elementwise(self, kind: str, *args: Tensor) -> Tensor:
        fn = ELEMENTWISE.get(kind)
        if fn is None:
            raise UnknownOpError(f"unknown element-wise kind {kind!r}")
        arity = 2 if kind in BINARY_KINDS else 1
        if len(args) != arity:
            raise ShapeError(f"{kind} takes {arity} tensor(s), got {len(args)}")
        return self.apply(fn, *args)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        return self.apply(Add, a, b)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        return self.apply(Sub, a, b)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        return self.apply(Mul, a, b)

    def activation(self, kind: str, x: Tensor) -> Tensor:
        if kind not in ACTIVATIONS:
            raise UnknownOpError(f"unknown activation {kind!r}, expected one of {ACTIVATIONS}")
        return self.apply(ELEMENTWISE[kind], x)

    def softmax(self, x: Tensor, axis: int = -1) -> Tensor:
        return self.apply(Softmax, x, axis=axis)

    def log_softmax(self, x: Tensor, axis: int = -1) -> Tensor:
        return self.apply(LogSoftmax, x, axis=axis)

    def concat(self, a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
        return self.apply(Concat, a, b, axis=axis)

    def stack(self, xs: Sequence[Tensor], axis: int = 0) -> Tensor:
        if not xs:
            raise ShapeError("stack needs at least one tensor")
        return self.apply(Stack, *xs, axis=axis)

    def reduce(self, kind: str, x: Tensor, y: Optional[Tensor] = None):
        fn = REDUCTIONS.get(kind)
        if fn is None:
            raise UnknownOpError(f"unknown reduction {kind!r}")
        if kind == "dot":
            if y is None:
                raise ShapeError("dot needs two vectors")
            return self.apply(fn, x, y)
        out = self.apply(fn, x)
        if kind == "max_with_argmax":
            return out, self.nodes[out.node_id].ctx.index  # type: ignore[union-attr]
        return out

    def sum(self, x: Tensor) -> Tensor:
        return self.reduce("sum", x)

    def mean(self, x: Tensor) -> Tensor:
        return self.reduce("mean", x)

    def dot(self, x: Tensor, y: Tensor) -> Tensor:
        return self.reduce("dot", x, y)

    def take(self, x: Tensor, indices: Sequence[int], axis: int = 0) -> Tensor:
        return self.apply(Take, x, indices=tuple(int(i) for i in indices), axis=axis)

    def transpose(self, x: Tensor) -> Tensor:
        return self.apply(Transpose, x)

    def reshape(self, x: Tensor, shape: Sequence[int]) -> Tensor:
        return self.apply(Reshape, x, shape=tuple(int(d) for d in shape))


def backward(tape: Tape, loss: Tensor, params: Optional[Dict[str, Tensor]] = None) -> Dict[str, Tensor]:
    """
    Gradients of a scalar ``loss`` w.r.t. every grad_required leaf on ``tape``.

    Leaves are keyed by their name (unnamed leaves as ``#<node_id>``). When ``params`` is
    given, every parameter missing from the tape gets an all-zero gradient.
    """
    if loss._tape is not tape or loss.node_id is None or tape.nodes[loss.node_id].output is not loss:
        raise TapeError("loss is not a node of this tape")
    if loss.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")

    grads: List[Optional[np.ndarray]] = [None] * len(tape.nodes)
    grads[loss.node_id] = np.ones(loss.shape, dtype=DTYPE)
    for node in reversed(tape.nodes[: loss.node_id + 1]):
        g = grads[node.node_id]
        if g is None or node.ctx is None or not node.output.grad_required:
            continue
        for parent, pg in zip(node.inputs, node.ctx.backward(g)):
            if pg is None or not tape.nodes[parent].output.grad_required:
                continue
            grads[parent] = pg if grads[parent] is None else grads[parent] + pg

    out: Dict[str, Tensor] = {}
    for node in tape.nodes:
        if node.ctx is not None or not node.output.grad_required:
            continue
        key = node.output.name or f"#{node.node_id}"
        g = grads[node.node_id]
        out[key] = Tensor(g if g is not None else np.zeros(node.output.shape))
    for name, p in (params or {}).items():
        if name not in out:
            out[name] = Tensor(np.zeros(p.shape))
    return out
