"""Tape-based reverse-mode differentiation over dense float64 arrays.

Only the primitives the model needs are provided. Every operation that
touches a tape-owned tensor appends a node to that tape in forward order;
:meth:`Tape.backward` walks the nodes in reverse and accumulates
vector-Jacobian products into the registered parameters.

Operations whose inputs are all constants (no tape) run eagerly and
record nothing, which is how evaluation-mode forward passes avoid the
bookkeeping cost.
"""
from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from relatt.errors import ContractError, NumericError


class Tensor:
    """An immutable float64 array, optionally attached to a :class:`Tape`."""

    __slots__ = ("value", "tape", "parents", "vjp", "op", "name", "index")

    def __init__(self, value, tape=None, parents=(), vjp=None, op="const", name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.name = name
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    @property
    def requires_grad(self):
        return self.tape is not None

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() on tensor of shape {self.value.shape}")
        return float(self.value.reshape(()))


class Tape:
    """Records operations in forward order and replays them backward."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.params: dict[str, Tensor] = {}

    def param(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        arr = np.array(value, dtype=np.float64, copy=True)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"param:{name}")
        t = Tensor(arr, tape=self, op="param", name=name)
        self._append(t)
        self.params[name] = t
        return t

    def _append(self, t: Tensor) -> None:
        t.index = len(self.nodes)
        self.nodes.append(t)

    def backward(self, output: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``output`` for every registered parameter.

        Parameters that the output does not depend on get exact zeros.
        """
        if output.value.size != 1:
            raise ContractError(f"backward needs a scalar output, got shape {output.value.shape}")
        grads: list = [None] * len(self.nodes)
        if output.tape is self:
            grads[output.index] = np.ones_like(output.value)
            for i in range(output.index, -1, -1):
                g = grads[i]
                node = self.nodes[i]
                if g is None or node.vjp is None:
                    continue
                for parent, pg in zip(node.parents, node.vjp(g)):
                    if pg is None or parent.tape is not self:
                        continue
                    j = parent.index
                    grads[j] = pg if grads[j] is None else grads[j] + pg
        out = {}
        for name, p in self.params.items():
            g = grads[p.index]
            out[name] = np.zeros_like(p.value) if g is None else np.asarray(g, dtype=np.float64).reshape(p.value.shape)
        return out


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(op: str, value: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericError(op)
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is not None and p.tape is not tape:
                raise ContractError(f"{op}: inputs belong to different tapes")
            tape = p.tape
    if tape is None:
        return Tensor(value, op=op)
    t = Tensor(value, tape=tape, parents=tuple(parents), vjp=vjp, op=op)
    tape._append(t)
    return t


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value + b.value
    except ValueError as exc:
        raise ContractError(f"add: {a.shape} vs {b.shape}") from exc
    return _record("add", value, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value * b.value
    except ValueError as exc:
        raise ContractError(f"mul: {a.shape} vs {b.shape}") from exc
    return _record("mul", value, (a, b),
                   lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul: {a.shape} @ {b.shape}")
    return _record("matmul", a.value @ b.value, (a, b),
                   lambda g: (g @ b.value.T, a.value.T @ g))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError as exc:
        raise ContractError(f"concat: shapes {[t.shape for t in ts]}") from exc
    sizes = np.cumsum([t.value.shape[axis] for t in ts])[:-1]
    return _record("concat", value, ts, lambda g: np.split(g, sizes, axis=axis))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        value = a.value.reshape(shape)
    except ValueError as exc:
        raise ContractError(f"reshape: {a.shape} -> {shape}") from exc
    return _record("reshape", value, (a,), lambda g: (g.reshape(a.shape),))


def gather(a, index) -> Tensor:
    """Rows ``a[index]``; backward scatters gradients back with accumulation."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, index, g)
        return (out,)

    return _record("gather", a.value[index], (a,), vjp)


def scatter_add(a, index, size: int) -> Tensor:
    """Sum rows of ``a`` into ``size`` output rows selected by ``index``."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.shape[0] != a.shape[0]:
        raise ContractError(f"scatter_add: {index.shape[0]} indices for {a.shape[0]} rows")
    out = np.zeros((size,) + a.shape[1:])
    np.add.at(out, index, a.value)
    return _record("scatter_add", out, (a,), lambda g: (g[index],))


def segment_softmax(logits, groups, n_groups: int) -> Tensor:
    """Softmax of a 1-D vector within each group given by ``groups``.

    Each group is shifted by its own maximum before exponentiation.
    """
    x = as_tensor(logits)
    groups = np.asarray(groups, dtype=np.int64)
    if x.value.ndim != 1 or groups.shape != x.shape:
        raise ContractError(f"segment_softmax: logits {x.shape}, groups {groups.shape}")
    if x.value.size == 0:
        return _record("segment_softmax", x.value.copy(), (x,), lambda g: (g,))
    gmax = np.full(n_groups, -np.inf)
    np.maximum.at(gmax, groups, x.value)
    ex = np.exp(x.value - gmax[groups])
    denom = np.bincount(groups, weights=ex, minlength=n_groups)
    y = ex / denom[groups]

    def vjp(g):
        dot = np.bincount(groups, weights=g * y, minlength=n_groups)
        return (y * (g - dot[groups]),)

    return _record("segment_softmax", y, (x,), vjp)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def softplus(a) -> Tensor:
    """log(1 + exp(x)) in the overflow-free form max(x, 0) + log1p(exp(-|x|))."""
    a = as_tensor(a)
    x = a.value
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    e = np.exp(-np.abs(x))
    sig = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record("softplus", y, (a,), lambda g: (g * sig,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _record("relu", np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.value > 0, 1.0, slope)
    return _record("leaky_relu", a.value * factor, (a,), lambda g: (g * factor,))


def sum_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)
    value = a.value.sum(axis=axis)
    return _record("sum", value, (a,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.value.size
    if n == 0:
        raise ContractError("mean of an empty tensor")
    return _record("mean", np.asarray(a.value.mean()), (a,),
                   lambda g: (np.full(a.shape, float(g) / n),))


def evaluate_with_gradients(program: Callable[[dict[str, Tensor]], Tensor],
                            params: Mapping[str, np.ndarray]):
    """Run ``program`` on taped copies of ``params``.

    Returns ``(loss, grads)`` where ``grads`` maps every parameter name to
    the exact reverse-mode derivative of the scalar loss.
    """
    tape = Tape()
    tensors = {name: tape.param(name, value) for name, value in params.items()}
    out = program(tensors)
    if not isinstance(out, Tensor) or out.value.size != 1:
        shape = getattr(out, "shape", None)
        raise ContractError(f"program must return a scalar tensor, got shape {shape}")
    return out.item(), tape.backward(out)
