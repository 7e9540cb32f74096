"""Dense float64 tensors with a reverse-mode differentiation tape.

A :class:`Tape` records every operation whose inputs include a recorded
tensor. Nodes are appended in execution order, so the node list is always
topologically sorted and :meth:`Tape.backward` is a single reverse sweep.

Example::

    tape = Tape()
    z = tape.watch(np.ones((2, 3)))
    loss = (z * z).sum()
    (gz,) = tape.gradients(loss, [z])   # == 2 * z
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "DimensionError",
    "EmptyReductionError",
    "NotScalarError",
    "TapeMismatchError",
    "as_tensor",
    "matmul",
    "softmax",
    "reduce",
    "backward",
    "stack",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "relu",
    "layer_norm",
    "gelu",
]


class DimensionError(ValueError):
    pass


class EmptyReductionError(ValueError):
    pass


class NotScalarError(ValueError):
    pass


class TapeMismatchError(ValueError):
    pass


VJP = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Node:
    parents: tuple[int, ...]
    vjp: VJP | None
    value: np.ndarray
    op: str = "leaf"


@dataclass
class Tape:
    """Ordered record of operations; one per forward/backward pass."""

    nodes: list[Node] = field(default_factory=list)

    def watch(self, value) -> "Tensor":
        """Register ``value`` as a differentiable leaf."""
        data = _frozen(np.array(value, dtype=np.float64))
        return self._push(data, (), None, "leaf")

    def _push(self, data, parents, vjp, op) -> "Tensor":
        self.nodes.append(Node(parents, vjp, data, op))
        return Tensor(data, self, len(self.nodes) - 1)

    def backward(self, loss: "Tensor") -> dict[int, np.ndarray]:
        """Gradients of scalar ``loss`` for every node it depends on.

        The returned mapping holds exactly the ancestors of ``loss`` (and
        ``loss`` itself), keyed by node id.
        """
        if loss.tape is not self or loss.node is None:
            raise NotScalarError("loss is not recorded on this tape")
        if loss.data.size != 1:
            raise NotScalarError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
        for idx in range(loss.node, -1, -1):
            g = grads.get(idx)
            if g is None:
                continue
            node = self.nodes[idx]
            if node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None:
                    continue
                if parent in grads:
                    grads[parent] = grads[parent] + pg
                else:
                    grads[parent] = pg
        return grads

    def gradients(self, loss: "Tensor", wrt: Iterable["Tensor"]) -> list[np.ndarray]:
        """Gradients of ``loss`` w.r.t. the given leaves (zeros if unreachable)."""
        grads = self.backward(loss)
        out = []
        for t in wrt:
            if t.tape is not self:
                raise TapeMismatchError("requested tensor is not on this tape")
            g = grads.get(t.node)
            out.append(np.zeros_like(t.data) if g is None else g)
        return out


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    """Immutable float64 array, optionally recorded on a :class:`Tape`."""

    __array_priority__ = 100

    def __init__(self, data, tape: Tape | None = None, node: int | None = None):
        if isinstance(data, np.ndarray) and data.dtype == np.float64 and not data.flags.writeable:
            self.data = data
        else:
            self.data = _frozen(np.array(data, dtype=np.float64))
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def recorded(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.recorded else ""
        return f"Tensor(shape={self.shape}{tag})"

    # arithmetic
    def __add__(self, other):
        return _binary(self, other, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, "sub")

    def __rsub__(self, other):
        return _binary(as_tensor(other), self, "sub")

    def __mul__(self, other):
        return _binary(self, other, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, "div")

    def __rtruediv__(self, other):
        return _binary(as_tensor(other), self, "div")

    def __neg__(self):
        return _unary(self, -self.data, lambda g: (-g,), "neg")

    def __pow__(self, p: float):
        x = self.data
        return _unary(self, x**p, lambda g: (g * p * x ** (p - 1),), "pow")

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        x = self.data
        out = x[idx]

        basic = all(isinstance(i, (int, slice)) for i in (idx if isinstance(idx, tuple) else (idx,)))

        def vjp(g):
            full = np.zeros_like(x)
            if basic:
                full[idx] = g
            else:
                np.add.at(full, idx, g)
            return (full,)

        return _unary(self, np.array(out), vjp, "index")

    # shape
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return _unary(self, self.data.reshape(shape), lambda g: (g.reshape(src),), "reshape")

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return _unary(self, self.data.transpose(axes), lambda g: (g.transpose(inv),), "transpose")

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)

    # reductions
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce(self, "sum", axis, keepdims)

    def max(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce(self, "max", axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return reduce(self, "sum", axis, keepdims) * (1.0 / n)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _common_tape(*ts: Tensor) -> Tape | None:
    tape = None
    for t in ts:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise TapeMismatchError("operands are recorded on different tapes")
            tape = t.tape
    return tape


def _make(out: np.ndarray, inputs: Sequence[Tensor], vjp: VJP, op: str) -> Tensor:
    out = _frozen(np.asarray(out, dtype=np.float64))
    tape = _common_tape(*inputs)
    if tape is None:
        return Tensor(out)
    parents = []
    slots = []
    for k, t in enumerate(inputs):
        if t.tape is not None:
            parents.append(t.node)
            slots.append(k)

    if len(slots) == len(inputs):
        wrapped = vjp
    else:

        def wrapped(g, _vjp=vjp, _slots=tuple(slots)):
            gs = _vjp(g)
            return [gs[k] for k in _slots]

    return tape._push(out, tuple(parents), wrapped, op)


def _unary(x: Tensor, out, vjp: VJP, op: str) -> Tensor:
    return _make(out, (x,), vjp, op)


def _binary(a, b, kind: str) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data
    if kind == "add":
        out = x + y
        vjp = lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape))
    elif kind == "sub":
        out = x - y
        vjp = lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape))
    elif kind == "mul":
        out = x * y
        vjp = lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape))
    elif kind == "div":
        out = x / y
        vjp = lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape))
    else:  # pragma: no cover
        raise ValueError(kind)
    return _make(out, (a, b), vjp, kind)


def matmul(a, b) -> Tensor:
    """Matrix product, batched over leading axes like :func:`numpy.matmul`."""
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data
    if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {x.shape} @ {y.shape}")
    out = x @ y

    def vjp(g):
        ga = g @ np.swapaxes(y, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

    return _make(out, (a, b), vjp, "matmul")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _unary(x, y, vjp, "softmax")


def _check_axis(x: Tensor, axis) -> None:
    if axis is None:
        return
    for ax in np.atleast_1d(axis):
        if not -x.ndim <= ax < x.ndim:
            raise DimensionError(f"axis {ax} out of range for shape {x.shape}")


def reduce(x, kind: str = "sum", axis=None, keepdims: bool = False) -> Tensor:
    """Sum or max over ``axis`` (or everything when ``axis`` is None).

    The max gradient is routed to the first maximal entry along the axis.
    """
    x = as_tensor(x)
    _check_axis(x, axis)
    data = x.data
    if kind == "sum":
        out = data.sum(axis=axis, keepdims=keepdims)
        shape = data.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _unary(x, out, vjp, "sum")
    if kind == "max":
        if axis is not None and np.ndim(axis) > 0:
            raise DimensionError("max reduces over a single axis or everything")
        n = data.size if axis is None else data.shape[axis]
        if n == 0:
            raise EmptyReductionError(f"max over an empty axis of shape {data.shape}")
        if axis is None:
            flat = data.reshape(-1)
            arg = int(np.argmax(flat))
            out = flat[arg]
            if keepdims:
                out = np.reshape(out, (1,) * data.ndim)

            def vjp(g):
                full = np.zeros(data.size)
                full[arg] = np.reshape(g, ())
                return (full.reshape(data.shape),)

            return _unary(x, out, vjp, "max")
        arg = np.expand_dims(np.argmax(data, axis=axis), axis)
        out = np.take_along_axis(data, arg, axis)
        if not keepdims:
            out = np.squeeze(out, axis)

        def vjp(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            full = np.zeros_like(data)
            np.put_along_axis(full, arg, g, axis)
            return (full,)

        return _unary(x, out, vjp, "max")
    raise ValueError(f"unknown reduction {kind!r}")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise EmptyReductionError("stack of no tensors")
    out = np.stack([t.data for t in ts], axis=axis)
    n = len(ts)

    def vjp(g):
        return [np.take(g, k, axis=axis) for k in range(n)]

    return _make(out, ts, vjp, "stack")


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _unary(x, y, lambda g: (g * y,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    return _unary(x, np.log(d), lambda g: (g / d,), "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    y = np.sqrt(x.data)
    return _unary(x, y, lambda g: (g * 0.5 / y,), "sqrt")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _unary(x, y, lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x) -> Tensor:
    """max(x, 0); the subgradient at 0 is 0."""
    x = as_tensor(x)
    pos = x.data > 0
    return _unary(x, np.where(pos, x.data, 0.0), lambda g: (g * pos,), "relu")


def gelu(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    c = np.sqrt(2.0 / np.pi)
    inner = c * (d + 0.044715 * d**3)
    th = np.tanh(inner)
    y = 0.5 * d * (1.0 + th)

    def vjp(g):
        dinner = c * (1.0 + 3 * 0.044715 * d * d)
        return (g * (0.5 * (1.0 + th) + 0.5 * d * (1.0 - th * th) * dinner),)

    return _unary(x, y, vjp, "gelu")


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    x = as_tensor(x)
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _unary(x, xhat, vjp, "layer_norm")


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep from ``loss`` over the tape it was recorded on."""
    if loss.tape is None:
        raise NotScalarError("loss is not recorded on any tape")
    return loss.tape.backward(loss)
