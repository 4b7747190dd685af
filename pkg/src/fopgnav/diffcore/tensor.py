"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every primitive applied to tensors that depend on a
watched leaf. :func:`backward` walks the record in reverse and returns the
gradient of ``sum(output * output_grad)`` with respect to every leaf.

Tensors without a tape are constants: operations on them are evaluated
eagerly and nothing is recorded, which is how gradient-free rollouts share
code with differentiable ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf appears in a tensor or gradient."""


class TapeError(RuntimeError):
    pass


def _check_finite(data: np.ndarray, what: str = "tensor") -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite value in {what}")


class Tensor:
    """Dense float64 array, optionally attached to a tape."""

    __slots__ = ("data", "grad", "tape", "id", "name")
    __array_priority__ = 100
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, data, tape: Tape | None = None, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, name or "tensor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.id = -1
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = "const" if self.tape is None else f"id={self.id}"
        return f"Tensor({tag}, shape={self.shape})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    # arithmetic sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class Node:
    out_id: int
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    fwd: Callable[..., np.ndarray]
    op: str


class Tape:
    """Single-writer record of primitive operations.

    Leaves are created with :meth:`watch`; their names double as the keys of
    the gradient map returned by :func:`backward`.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: dict[str, Tensor] = {}
        self._next = 0
        self.consumed = False

    def _new_id(self) -> int:
        i = self._next
        self._next += 1
        return i

    def watch(self, data, name: str | None = None) -> Tensor:
        """Register a differentiable leaf. Watching an existing name returns it."""
        if self.consumed:
            raise TapeError("tape already consumed by backward")
        if name is not None and name in self.leaves:
            leaf = self.leaves[name]
            if leaf.data is not data and not np.array_equal(leaf.data, data):
                raise TapeError(f"leaf {name!r} re-watched with different data")
            return leaf
        t = Tensor(data, tape=self)
        t.id = self._new_id()
        t.name = name if name is not None else f"leaf{t.id}"
        self.leaves[t.name] = t
        return t

    def record(self, out: Tensor, inputs, vjp, fwd, op: str) -> Tensor:
        if self.consumed:
            raise TapeError("tape already consumed by backward")
        out.tape = self
        out.id = self._new_id()
        self.nodes.append(Node(out.id, tuple(inputs), vjp, fwd, op))
        return out

    def __len__(self) -> int:
        return len(self.nodes)

    def check_order(self) -> bool:
        """True when every recorded input id precedes its consumer."""
        for node in self.nodes:
            for t in node.inputs:
                if t.tape is self and t.id >= node.out_id:
                    return False
        return True

    def replay(self) -> dict[int, np.ndarray]:
        """Recompute every recorded output from the leaves and constants."""
        values = {leaf.id: leaf.data for leaf in self.leaves.values()}
        for node in self.nodes:
            args = [values[t.id] if t.tape is self else t.data for t in node.inputs]
            values[node.out_id] = node.fwd(*args)
        return values


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(inputs) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise TapeError("operands recorded on different tapes")
            tape = t.tape
    return tape


def primitive(op: str, fwd: Callable[..., np.ndarray], vjp_factory, *inputs) -> Tensor:
    """Evaluate ``fwd`` on the inputs' data and record it if any input is taped.

    ``vjp_factory(out_data, *in_data)`` returns the vector-Jacobian product
    closure; it is only built when recording.
    """
    ins = tuple(_as_tensor(x) for x in inputs)
    datas = [t.data for t in ins]
    out = Tensor(fwd(*datas), name=op)
    tape = _tape_of(ins)
    if tape is not None:
        tape.record(out, ins, vjp_factory(out.data, *datas), fwd, op)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- primitives

def add(a, b) -> Tensor:
    return primitive(
        "add", np.add,
        lambda o, x, y: lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
        a, b)


def sub(a, b) -> Tensor:
    return primitive(
        "sub", np.subtract,
        lambda o, x, y: lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)),
        a, b)


def mul(a, b) -> Tensor:
    return primitive(
        "mul", np.multiply,
        lambda o, x, y: lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        a, b)


def div(a, b) -> Tensor:
    return primitive(
        "div", np.divide,
        lambda o, x, y: lambda g: (_unbroadcast(g / y, x.shape),
                                   _unbroadcast(-g * o / y, y.shape)),
        a, b)


def neg(a) -> Tensor:
    return primitive("neg", np.negative, lambda o, x: lambda g: (-g,), a)


def square(a) -> Tensor:
    return primitive("square", np.square, lambda o, x: lambda g: (2.0 * x * g,), a)


def power(a, p: float) -> Tensor:
    return primitive(
        "power", lambda x: np.power(x, p),
        lambda o, x: lambda g: (p * np.power(x, p - 1) * g,), a)


def sqrt(a) -> Tensor:
    return primitive("sqrt", np.sqrt, lambda o, x: lambda g: (0.5 * g / o,), a)


def exp(a) -> Tensor:
    return primitive("exp", np.exp, lambda o, x: lambda g: (g * o,), a)


def log(a) -> Tensor:
    return primitive("log", np.log, lambda o, x: lambda g: (g / x,), a)


def sin(a) -> Tensor:
    return primitive("sin", np.sin, lambda o, x: lambda g: (g * np.cos(x),), a)


def cos(a) -> Tensor:
    return primitive("cos", np.cos, lambda o, x: lambda g: (-g * np.sin(x),), a)


def tanh(a) -> Tensor:
    return primitive("tanh", np.tanh, lambda o, x: lambda g: (g * (1.0 - o * o),), a)


def elu(a) -> Tensor:
    def fwd(x):
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    return primitive(
        "elu", fwd,
        lambda o, x: lambda g: (g * np.where(x > 0, 1.0, o + 1.0),), a)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def softplus(a) -> Tensor:
    return primitive(
        "softplus", lambda x: np.logaddexp(0.0, x),
        lambda o, x: lambda g: (g * _sigmoid(x),), a)


def softclip(a, bound: float, knee: float = 0.75) -> Tensor:
    """Identity on ``|x| <= knee*bound``, tanh saturation towards ``bound`` beyond.

    C2-smooth at the knee and strictly increasing, so the gradient is never
    exactly zero.
    """
    k = knee * bound
    w = bound - k

    def fwd(x):
        ax = np.abs(x)
        return np.where(ax <= k, x, np.sign(x) * (k + w * np.tanh((ax - k) / w)))

    def vjp_factory(o, x):
        ax = np.abs(x)
        # sech^2 written so it underflows far later than 1 - tanh^2
        e = np.exp(-2.0 * np.maximum(ax - k, 0.0) / w)
        d = np.where(ax <= k, 1.0, 4.0 * e / (1.0 + e) ** 2)
        return lambda g: (g * d,)

    return primitive("softclip", fwd, vjp_factory, a)


def clip(a, lo: float, hi: float) -> Tensor:
    return primitive(
        "clip", lambda x: np.clip(x, lo, hi),
        lambda o, x: lambda g: (g * ((x >= lo) & (x <= hi)),), a)


def matmul(a, b) -> Tensor:
    def vjp_factory(o, x, y):
        def vjp(g):
            if x.ndim == 1:
                gx = y @ g
                gy = np.outer(x, g)
            else:
                gx = g @ y.T
                gy = x.T @ g
            return gx, gy
        return vjp
    return primitive("matmul", np.matmul, vjp_factory, a, b)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    def vjp_factory(o, x):
        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)
        return vjp
    return primitive("sum", lambda x: np.sum(x, axis=axis, keepdims=keepdims), vjp_factory, a)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / float(n))


def reshape(a, shape) -> Tensor:
    return primitive(
        "reshape", lambda x: np.reshape(x, shape),
        lambda o, x: lambda g: (np.reshape(g, x.shape),), a)


def getitem(a, idx) -> Tensor:
    def vjp_factory(o, x):
        def vjp(g):
            gx = np.zeros_like(x)
            np.add.at(gx, idx, g)
            return (gx,)
        return vjp
    return primitive("getitem", lambda x: x[idx], vjp_factory, a)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp_factory(o, *xs):
        return lambda g: tuple(np.split(g, splits, axis=axis))
    return primitive("concat", lambda *xs: np.concatenate(xs, axis=axis), vjp_factory, *ts)


def stack(tensors, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    n = len(ts)

    def vjp_factory(o, *xs):
        return lambda g: tuple(np.take(g, i, axis=axis) for i in range(n))
    return primitive("stack", lambda *xs: np.stack(xs, axis=axis), vjp_factory, *ts)


def where(mask, a, b) -> Tensor:
    """Select ``a`` where ``mask`` else ``b``; the mask is a constant."""
    m = np.asarray(mask, dtype=bool)
    return primitive(
        "where", lambda x, y: np.where(m, x, y),
        lambda o, x, y: lambda g: (_unbroadcast(np.where(m, g, 0.0), x.shape),
                                   _unbroadcast(np.where(m, 0.0, g), y.shape)),
        a, b)


# ---------------------------------------------------------------- reverse pass

def backward(tape: Tape, output: Tensor, output_grad=None) -> dict[str, np.ndarray]:
    """Gradient of ``sum(output * output_grad)`` for every leaf on ``tape``.

    The tape is consumed; leaf ``.grad`` fields are populated as a side effect.
    """
    if tape.consumed:
        raise TapeError("tape already consumed by backward")
    if output.tape is not None and output.tape is not tape:
        raise TapeError("output was not recorded on this tape")
    if output_grad is None:
        if output.data.size != 1:
            raise ValueError("output_grad required for non-scalar output")
        seed = np.ones_like(output.data)
    else:
        seed = np.asarray(output_grad, dtype=np.float64)
        if seed.shape != output.shape:
            raise ValueError(f"output_grad shape {seed.shape} != output shape {output.shape}")
    _check_finite(seed, "output_grad")

    grads: dict[int, np.ndarray] = {}
    if output.tape is tape:
        grads[output.id] = seed
        for node in reversed(tape.nodes):
            g = grads.pop(node.out_id, None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or inp.tape is not tape:
                    continue
                prev = grads.get(inp.id)
                grads[inp.id] = gi if prev is None else prev + gi
    tape.consumed = True

    result = {}
    for name, leaf in tape.leaves.items():
        g = grads.get(leaf.id)
        g = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.shape)
        _check_finite(g, f"gradient of {name}")
        leaf.grad = g
        result[name] = g
    return result
