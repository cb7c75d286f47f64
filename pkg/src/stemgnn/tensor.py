"""Dense float64 tensors with a reverse-mode tape.

A :class:`Tape` records every operation whose inputs are tracked while it is
the active tape (``with Tape() as tape: ...``).  Leaves are tensors created
with ``requires_grad=True``; they are registered lazily the first time an op
consumes them.  :func:`backward` walks the recorded nodes in decreasing id
order and returns the accumulated gradients.

All ops accept leading batch dimensions where that is meaningful; binary
elementwise ops require identical shapes.
"""

from __future__ import annotations

import functools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, StemGNNError

_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Immutable dense array of 64-bit reals."""

    __slots__ = ("data", "requires_grad", "_tape", "_node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self._tape: Tape | None = None
        self._node: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def node_id(self) -> int | None:
        return self._node

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def flat(self) -> np.ndarray:
        """Row-major flat view of the values."""
        return self.data.reshape(-1)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self._node})"

    # operator sugar; every dunder maps to a named op below
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.broadcast_to(np.asarray(x, dtype=np.float64), like.shape))


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    kind: str
    inputs: tuple[int | None, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    shape: tuple[int, ...]


@dataclass
class Tape:
    """Append-only record of operations, confined to one thread."""

    nodes: list[Node] = field(default_factory=list)
    grads: dict[int, np.ndarray] = field(default_factory=dict)
    _leaves: dict[int, tuple[int, Tensor]] = field(default_factory=dict)

    def __enter__(self) -> "Tape":
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def leaf(self, t: Tensor) -> int:
        key = id(t)
        if key not in self._leaves:
            nid = self._append(Node("leaf", (), None, t.shape))
            self._leaves[key] = (nid, t)
        return self._leaves[key][0]

    def id_of(self, t: Tensor) -> int | None:
        if t._tape is self:
            return t._node
        if t.requires_grad:
            return self.leaf(t)
        return None

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient for ``t`` after :func:`backward`; zeros if unreachable."""
        if t._tape is self:
            nid = t._node
        elif id(t) in self._leaves:
            nid = self._leaves[id(t)][0]
        else:
            return np.zeros(t.shape)
        g = self.grads.get(nid)
        return np.zeros(t.shape) if g is None else g

    def gradients(self, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
        return {name: self.grad(t) for name, t in params.items()}


def _record(kind: str, out: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap ``out`` and, if a tape is active and any input is tracked, log it."""
    result = Tensor(out)
    tape = _active_tape()
    if tape is None:
        return result
    ids = tuple(tape.id_of(t) for t in inputs)
    if all(i is None for i in ids):
        return result
    result._tape = tape
    result._node = tape._append(Node(kind, ids, vjp, result.shape))
    return result


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar ``loss``; returns node id -> gradient."""
    if loss.data.size != 1:
        raise StemGNNError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape.grads = {}
    if loss._tape is not tape:
        return tape.grads
    grads = tape.grads
    grads[loss._node] = np.ones(loss.shape)
    for nid in range(loss._node, -1, -1):
        g = grads.get(nid)
        node = tape.nodes[nid]
        if g is None or node.vjp is None:
            continue
        in_grads = node.vjp(g)
        for src, gi in zip(node.inputs, in_grads):
            if src is None or gi is None:
                continue
            if src in grads:
                grads[src] = grads[src] + gi
            else:
                grads[src] = gi
    return grads


def finite_difference_gradient(
    f: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    coords: Mapping[str, Iterable[int]] | None = None,
) -> dict[str, np.ndarray]:
    """Central differences of scalar ``f`` w.r.t. every entry of ``params``.

    ``coords`` optionally restricts each named array to a subset of flat
    indices; entries not visited are left as NaN.
    """
    if h <= 0:
        raise ConfigurationError("finite-difference step must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    out = {}
    for name, arr in base.items():
        g = np.full(arr.size, np.nan) if coords is not None else np.zeros(arr.size)
        idx = range(arr.size) if coords is None else coords.get(name, ())
        flat = arr.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = f(base)
            flat[i] = orig - h
            fm = f(base)
            flat[i] = orig
            g[i] = (fp - fm) / (2 * h)
        out[name] = g.reshape(arr.shape)
    return out


# --------------------------------------------------------------------------
# ops


def _check_same(a: Tensor, b: Tensor, kind: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} differ")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading batch axes broadcast."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    out = A @ B

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(B, -1, -2), A.shape)
        gb = _unbroadcast(np.swapaxes(A, -1, -2) @ g, B.shape)
        return ga, gb

    return _record("matmul", out, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    _check_same(a, b, "hadamard")
    A, B = a.data, b.data
    return _record("hadamard", A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` where ``b`` broadcasts against the trailing axes of ``x``."""
    tail = x.shape[x.ndim - b.ndim:] if b.ndim else ()
    if b.ndim > x.ndim or any(bi not in (1, xi) for bi, xi in zip(b.shape, tail)):
        raise DimensionError(f"add_bias: bias {b.shape} does not trail {x.shape}")
    return _record("add_bias", x.data + b.data, (x, b),
                   lambda g: (g, _unbroadcast(g, b.shape)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _record("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def elementwise(kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch by name: add, subtract, hadamard, sigmoid, tanh."""
    binary = {"add": add, "subtract": sub, "hadamard": mul}
    unary = {"sigmoid": sigmoid, "tanh": tanh}
    if kind in binary:
        if b is None:
            raise ConfigurationError(f"{kind} needs two operands")
        return binary[kind](a, b)
    if kind in unary:
        return unary[kind](a)
    raise ConfigurationError(f"unknown elementwise op {kind!r}")


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the row maximum."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record("softmax", y, (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _record("sum", np.array(a.data.sum()), (a,),
                   lambda g: (np.broadcast_to(g, shape).copy(),))


def square(a: Tensor) -> Tensor:
    A = a.data
    return _record("square", A * A, (a,), lambda g: (2.0 * g * A,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _record("swapaxes", np.swapaxes(a.data, ax1, ax2), (a,),
                   lambda g: (np.swapaxes(g, ax1, ax2),))


def transpose(a: Tensor) -> Tensor:
    return swapaxes(a, -1, -2)


def getitem(a: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing only; fancy indices may repeat."""
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[key] += g
        return (out,)

    return _record("getitem", np.array(a.data[key]), (a,), vjp)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    arrays = [p.data for p in parts]
    out = np.concatenate(arrays, axis=axis)
    edges = np.cumsum([x.shape[axis] for x in arrays])[:-1]

    def vjp(g):
        return tuple(np.split(g, edges, axis=axis))

    return _record("concat", out, tuple(parts), vjp)


@functools.lru_cache(maxsize=512)
def _einsum_path(spec: str, *shapes):
    dummies = [np.empty(s) for s in shapes]
    return np.einsum_path(spec, *dummies, optimize="greedy")[0]


def _einsum(spec: str, *ops: np.ndarray) -> np.ndarray:
    # path search dominates for the small tensors here, so memoize it per shape
    return np.einsum(spec, *ops, optimize=_einsum_path(spec, *(o.shape for o in ops)))


def contract(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum; every index of an operand must appear elsewhere."""
    if "." in spec:
        raise ConfigurationError("contract takes explicit subscripts, not ellipses")
    ins, out_sub = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for own, other in ((sa, sb), (sb, sa)):
        if not set(own) <= set(other) | set(out_sub):
            raise ConfigurationError(f"contract: index only in one operand in {spec!r}")
    A, B = a.data, b.data
    try:
        out = _einsum(spec, A, B)
    except ValueError as exc:
        raise DimensionError(f"contract {spec!r}: {a.shape} vs {b.shape}") from exc

    def vjp(g):
        return (_einsum(f"{out_sub},{sb}->{sa}", g, B),
                _einsum(f"{out_sub},{sa}->{sb}", g, A))

    return _record("contract", out, (a, b), vjp)


def conv1d_same(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Zero-padded cross-correlation along the last axis.

    ``x`` is ``(..., C_in, L)``, ``kernels`` is ``(C_out, C_in, tau)`` with odd
    ``tau``, ``bias`` is ``(C_out,)``; the result is ``(..., C_out, L)``.
    """
    c_out, c_in, tau = kernels.shape
    if tau % 2 == 0:
        raise ConfigurationError(f"conv1d_same needs an odd kernel size, got {tau}")
    if x.ndim < 2 or x.shape[-2] != c_in or bias.shape != (c_out,):
        raise DimensionError(
            f"conv1d_same: input {x.shape}, kernels {kernels.shape}, bias {bias.shape}")
    L = x.shape[-1]
    pad = (tau - 1) // 2
    xp = np.zeros(x.shape[:-1] + (L + 2 * pad,))
    xp[..., pad:pad + L] = x.data
    # cols[..., i*tau + s, t] = xp[..., i, t + s]
    cols = np.stack([xp[..., s:s + L] for s in range(tau)], axis=-2)
    cols = cols.reshape(x.shape[:-2] + (c_in * tau, L))
    W = kernels.data.reshape(c_out, c_in * tau)
    out = W @ cols + bias.data[:, None]

    def vjp(g):
        gcols = (W.T @ g).reshape(x.shape[:-2] + (c_in, tau, L))
        gxp = np.zeros(xp.shape)
        for s in range(tau):
            gxp[..., s:s + L] += gcols[..., s, :]
        gx = gxp[..., pad:pad + L]
        g2 = g.reshape(-1, c_out, L)
        gw = np.tensordot(g2, cols.reshape(-1, c_in * tau, L), axes=([0, 2], [0, 2]))
        gb = g2.sum(axis=(0, 2))
        return gx, gw.reshape(kernels.shape), gb

    return _record("conv1d", out, (x, kernels, bias), vjp)


def custom(kind: str, out: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Record an op whose vector-Jacobian product is supplied by the caller."""
    return _record(kind, out, inputs, vjp)
