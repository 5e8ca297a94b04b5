"""Tape-based reverse-mode differentiation over numpy arrays.

Every :class:`Node` holds a float64 array and, for non-leaf nodes, the list of
parents together with the vector-Jacobian product that maps the node's adjoint
onto each parent. Spatial derivatives of a network are not obtained by nesting
reverse passes: they are pushed forward as explicit jets (value, first
derivatives, pure second derivatives) built from the same primitives, so one
reverse sweep over the jet graph yields parameter gradients of losses that
contain Laplacians (the parameter x space x space chain).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels


class NonFiniteError(FloatingPointError):
    """Raised when an evaluation produces inf or NaN."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum the adjoint back down to the operand's shape after numpy broadcasting
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "parents", "grad", "name", "requires_grad")

    __array_priority__ = 100.0

    def __init__(
        self,
        value,
        parents: Sequence[tuple["Node", Callable]] = (),
        name: str = "",
        requires_grad: bool = True,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        # parents that cannot reach a trainable leaf are dropped from the tape
        self.parents = tuple(p for p in parents if p[0].requires_grad)
        self.requires_grad = bool(self.parents) if parents else requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    # -- introspection ------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape})"

    def __len__(self) -> int:
        return len(self.value)

    # -- operators ------------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x, requires_grad=False)


def constant(x) -> Node:
    return Node(x, name="const", requires_grad=False)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    sa, sb = a.shape, b.shape
    return Node(
        a.value + b.value,
        [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))],
    )


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    sa, sb = a.shape, b.shape
    return Node(
        a.value - b.value,
        [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: -_unbroadcast(g, sb))],
    )


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    va, vb = a.value, b.value
    return Node(
        va * vb,
        [(a, lambda g: _unbroadcast(g * vb, va.shape)), (b, lambda g: _unbroadcast(g * va, vb.shape))],
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    va, vb = a.value, b.value
    out = va / vb
    return Node(
        out,
        [
            (a, lambda g: _unbroadcast(g / vb, va.shape)),
            (b, lambda g: _unbroadcast(-g * out / vb, vb.shape)),
        ],
    )


def neg(a) -> Node:
    a = as_node(a)
    return Node(-a.value, [(a, lambda g: -g)])


def power(a, p: float) -> Node:
    a = as_node(a)
    va = a.value
    if p == 2:
        return Node(va * va, [(a, lambda g: 2.0 * g * va)])
    return Node(va**p, [(a, lambda g: g * p * va ** (p - 1))])


def square(a) -> Node:
    return power(a, 2)


def tanh(a) -> Node:
    a = as_node(a)
    t = np.tanh(a.value)
    return Node(t, [(a, lambda g: g * (1.0 - t * t))])


def exp(a) -> Node:
    a = as_node(a)
    e = np.exp(a.value)
    return Node(e, [(a, lambda g: g * e)])


def sin(a) -> Node:
    a = as_node(a)
    va = a.value
    return Node(np.sin(va), [(a, lambda g: g * np.cos(va))])


def cos(a) -> Node:
    a = as_node(a)
    va = a.value
    return Node(np.cos(va), [(a, lambda g: -g * np.sin(va))])


def absolute(a) -> Node:
    """|a| with subgradient 0 at a == 0."""
    a = as_node(a)
    s = np.sign(a.value)
    return Node(np.abs(a.value), [(a, lambda g: g * s)])


def sqrt(a) -> Node:
    a = as_node(a)
    r = np.sqrt(a.value)
    return Node(r, [(a, lambda g: 0.5 * g / r)])


# ---------------------------------------------------------------------------
# reductions and structural ops
# ---------------------------------------------------------------------------

def sum(a, axis=None) -> Node:  # noqa: A001 - mirrors numpy naming
    a = as_node(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return Node(a.value.sum(axis=axis), [(a, vjp)])


def mean(a, axis=None) -> Node:
    a = as_node(a)
    n = a.value.size if axis is None else a.shape[axis]
    return sum(a, axis) * (1.0 / n)


def dot(a, b) -> Node:
    """Inner product of two 1-D nodes (or node and array)."""
    return sum(mul(a, b))


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    va, vb = a.value, b.value

    def vjp_a(g):
        if vb.ndim == 1:
            return _unbroadcast(np.multiply.outer(g, vb), va.shape)
        return _unbroadcast(g @ np.swapaxes(vb, -1, -2), va.shape)

    def vjp_b(g):
        if va.ndim == 1:
            return _unbroadcast(np.multiply.outer(va, g), vb.shape)
        if vb.ndim == 1:
            return _unbroadcast(np.swapaxes(va, -1, -2) @ g[..., None], vb.shape + (1,)).reshape(vb.shape)
        return _unbroadcast(np.swapaxes(va, -1, -2) @ g, vb.shape)

    return Node(va @ vb, [(a, vjp_a), (b, vjp_b)])


def getitem(a, index) -> Node:
    a = as_node(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        if _needs_add_at(index):
            np.add.at(out, index, g)
        else:
            out[index] = g
        return out

    return Node(a.value[index], [(a, vjp)])


def _needs_add_at(index) -> bool:
    # fancy integer indexing may repeat entries; basic slicing never does
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reshape(a, shape) -> Node:
    a = as_node(a)
    old = a.shape
    return Node(a.value.reshape(shape), [(a, lambda g: g.reshape(old))])


def stack(items: Sequence, axis: int = 0) -> Node:
    nodes = [as_node(x) for x in items]
    value = np.stack([n.value for n in nodes], axis=axis)
    parents = []
    for i, n in enumerate(nodes):
        parents.append((n, lambda g, i=i: np.take(g, i, axis=axis)))
    return Node(value, parents)


def concatenate(items: Sequence, axis: int = 0) -> Node:
    nodes = [as_node(x) for x in items]
    value = np.concatenate([n.value for n in nodes], axis=axis)
    parents = []
    start = 0
    for n in nodes:
        stop = start + n.shape[axis]
        sl = [slice(None)] * value.ndim
        sl[axis] = slice(start, stop)
        parents.append((n, lambda g, sl=tuple(sl): g[sl]))
        start = stop
    return Node(value, parents)


# ---------------------------------------------------------------------------
# fused jet kernels used by the network
# ---------------------------------------------------------------------------

def linear_jet(z: Node, weight: Node, bias: Node) -> Node:
    """Affine map of a jet stack.

    ``z`` has shape (K, N, fan_in); slice 0 is the value, the remaining slices
    are spatial derivatives, so the bias is added to slice 0 only.
    """
    z, weight, bias = as_node(z), as_node(weight), as_node(bias)
    vz, vw = z.value, weight.value
    out = vz @ vw.T
    out[0] += bias.value

    def vjp_z(g):
        return g @ vw

    def vjp_w(g):
        return g.reshape(-1, g.shape[-1]).T @ vz.reshape(-1, vz.shape[-1])

    def vjp_b(g):
        return g[0].sum(axis=0)

    return Node(out, [(z, vjp_z), (weight, vjp_w), (bias, vjp_b)])


def tanh_jet(z: Node, dim: int) -> Node:
    """Propagate a jet stack through tanh.

    Slices: 0 value, 1..dim first derivatives, dim+1..2*dim pure second
    derivatives (optional). For y = tanh(z):
    y' = s z', y'' = t2 z'^2 + s z'' with s = 1 - t^2, t2 = -2 t s.
    """
    z = as_node(z)
    vz = np.ascontiguousarray(z.value)
    has_hess = vz.shape[0] == 1 + 2 * dim
    t = np.tanh(vz[0])
    out = kernels.tanh_jet_forward(vz, t, dim, has_hess)

    def vjp(g):
        return kernels.tanh_jet_backward(np.ascontiguousarray(g), vz, t, dim, has_hess)

    return Node(out, [(z, vjp)])


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------

def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack_: list[tuple[Node, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every ancestor."""
    if root.value.size != 1:
        raise ValueError("backward() needs a scalar root")
    order = _topological(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        g = node.grad
        if g is None or not node.parents:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            if parent.grad is None:
                parent.grad = contrib
            else:
                parent.grad = parent.grad + contrib


def grad(root: Node, leaves: Iterable[Node]) -> list[np.ndarray]:
    """Gradients of a scalar root w.r.t. ``leaves``; unreachable leaves give zeros."""
    leaves = list(leaves)
    for leaf in leaves:
        leaf.grad = None
    backward(root)
    return [np.zeros_like(leaf.value) if leaf.grad is None else leaf.grad for leaf in leaves]


def check_finite(x, what: str = "value") -> None:
    v = value_of(x)
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"non-finite {what} encountered")
