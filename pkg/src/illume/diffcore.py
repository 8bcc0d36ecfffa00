"""Dense reverse-mode autodiff with differentiable derivative graphs.

Every vector-Jacobian product is itself written with :class:`Tensor`
operations, so running :func:`grad` with ``create_graph=True`` yields
gradients that can be differentiated again.  That is what the
input-Jacobian stability penalty of the meta-encoder needs.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ContractError(ValueError):
    pass


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = enabled
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Immutable float64 array plus the node that produced it."""

    __slots__ = ("data", "parents", "vjp", "op", "requires_grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.parents: tuple[Tensor, ...] = ()
        self.vjp = None
        self.op = "leaf"
        self.requires_grad = requires_grad

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    # -- operators -----------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    data = np.asarray(data, dtype=np.float64)
    data.setflags(write=False)
    out.data = data
    out.op = op
    out.vjp = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.parents = tuple(parents)
        out.requires_grad = True
    else:
        out.parents = ()
        out.requires_grad = False
    return out


def _check_finite_inputs(*ts: Tensor):
    return all(np.all(np.isfinite(t.data)) for t in ts)


# ----------------------------------------------------------------------
# broadcasting helpers
# ----------------------------------------------------------------------
def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce ``x`` by summation to ``shape`` (inverse of broadcasting)."""
    if x.shape == tuple(shape):
        return x
    nlead = x.ndim - len(shape)
    axes = list(range(nlead))
    for i, s in enumerate(shape):
        if s == 1 and x.shape[nlead + i] != 1:
            axes.append(nlead + i)
    out = tsum(x, axis=tuple(axes), keepdims=True) if axes else x
    return reshape(out, tuple(shape))


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if x.shape == tuple(shape):
        return x
    out = _node(np.broadcast_to(x.data, shape).copy(), (x,), "broadcast")
    if out.requires_grad:
        src = x.shape
        out.vjp = lambda g: (sum_to(g, src),)
    return out


def _bshape(a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} and {b.shape}") from exc


# ----------------------------------------------------------------------
# arithmetic
# ----------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b)
    out = _node(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        out.vjp = lambda g: (sum_to(g, a.shape), sum_to(g, b.shape))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b)
    out = _node(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        out.vjp = lambda g: (sum_to(g, a.shape), sum_to(neg(g), b.shape))
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = _node(-a.data, (a,), "neg")
    if out.requires_grad:
        out.vjp = lambda g: (neg(g),)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b)
    out = _node(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        out.vjp = lambda g: (
            sum_to(mul(g, b), a.shape) if a.requires_grad else None,
            sum_to(mul(g, a), b.shape) if b.requires_grad else None,
        )
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b)
    out = _node(a.data / b.data, (a, b), "div")
    if out.requires_grad:
        def vjp(g):
            ga = sum_to(div(g, b), a.shape) if a.requires_grad else None
            gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape) if b.requires_grad else None
            return ga, gb
        out.vjp = vjp
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands with at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = _node(np.matmul(a.data, b.data), (a, b), "matmul")
    if out.requires_grad:
        def vjp(g):
            ga = sum_to(matmul(g, swapaxes(b)), a.shape) if a.requires_grad else None
            gb = sum_to(matmul(swapaxes(a), g), b.shape) if b.requires_grad else None
            return ga, gb
        out.vjp = vjp
    return out


# ----------------------------------------------------------------------
# unary elementwise
# ----------------------------------------------------------------------
def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = _node(np.tanh(a.data), (a,), "tanh")
    if out.requires_grad:
        out.vjp = lambda g: (mul(g, sub(1.0, mul(out, out))),)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = _node(np.exp(a.data), (a,), "exp")
    if out.requires_grad:
        out.vjp = lambda g: (mul(g, out),)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    out = _node(np.log(a.data), (a,), "log")
    if out.requires_grad:
        out.vjp = lambda g: (div(g, a),)
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of a negative value")
    out = _node(np.sqrt(a.data), (a,), "sqrt")
    if out.requires_grad:
        out.vjp = lambda g: (div(mul(g, 0.5), out),)
    return out


def square(a) -> Tensor:
    a = as_tensor(a)
    out = _node(a.data * a.data, (a,), "square")
    if out.requires_grad:
        out.vjp = lambda g: (mul(g, mul(a, 2.0)),)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    out = _node(a.data * mask, (a,), "relu")
    if out.requires_grad:
        out.vjp = lambda g: (mul(g, mask),)
    return out


def clamp_min(a, lo: float) -> Tensor:
    """max(a, lo); the gradient is blocked where the clamp is active."""
    a = as_tensor(a)
    mask = (a.data > lo).astype(np.float64)
    out = _node(np.maximum(a.data, lo), (a,), "clamp_min")
    if out.requires_grad:
        out.vjp = lambda g: (mul(g, mask),)
    return out


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "square": square,
    "relu": relu,
}


def elementwise(op_tag: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op_tag]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_tag!r}") from None
    return fn(*args)


# ----------------------------------------------------------------------
# shape manipulation and reductions
# ----------------------------------------------------------------------
def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), "sum")
    if out.requires_grad:
        src = a.shape

        def vjp(g):
            if axis is not None and not keepdims:
                axes = (axis,) if np.isscalar(axis) else tuple(axis)
                axes = tuple(ax % len(src) for ax in axes)
                kept = tuple(1 if i in axes else s for i, s in enumerate(src))
                g = reshape(g, kept)
            elif axis is None and not keepdims:
                g = reshape(g, (1,) * len(src))
            return (broadcast_to(g, src),)

        out.vjp = vjp
    return out


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = _node(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        src = a.shape
        out.vjp = lambda g: (reshape(g, src),)
    return out


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = _node(np.transpose(a.data, axes), (a,), "transpose")
    if out.requires_grad:
        inv = None if axes is None else tuple(np.argsort(axes))
        out.vjp = lambda g: (transpose(g, inv),)
    return out


def swapaxes(a) -> Tensor:
    """Swap the last two axes."""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = _node(a.data[idx], (a,), "getitem")
    if out.requires_grad:
        src = a.shape
        out.vjp = lambda g: (_scatter(g, idx, src),)
    return out


def _scatter(g: Tensor, idx, shape) -> Tensor:
    buf = np.zeros(shape)
    np.add.at(buf, idx, g.data)
    out = _node(buf, (g,), "scatter")
    if out.requires_grad:
        out.vjp = lambda h: (getitem(h, idx),)
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)
    out = _node(data, tensors, "stack")
    if out.requires_grad:
        ax = axis % data.ndim

        def vjp(g):
            res = []
            for i, t in enumerate(tensors):
                sl = [slice(None)] * data.ndim
                sl[ax] = i
                res.append(getitem(g, tuple(sl)) if t.requires_grad else None)
            return tuple(res)

        out.vjp = vjp
    return out


def constant_like(a: Tensor, value: float) -> Tensor:
    return Tensor(np.full(a.shape, value))


# ----------------------------------------------------------------------
# reverse sweep
# ----------------------------------------------------------------------
def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def grad(root: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of scalar ``root`` with respect to each tensor in ``wrt``.

    With ``create_graph`` the returned tensors carry their own graph and
    can be differentiated again.  Tensors not connected to ``root`` get
    zero gradients.
    """
    if root.size != 1:
        raise ContractError(f"root must be scalar, got shape {root.shape}")
    wrt = list(wrt)
    if not root.requires_grad:
        return [Tensor(np.zeros(w.shape)) for w in wrt]
    order = _topo(root)
    grads: dict[int, Tensor] = {id(root): Tensor(np.ones(root.shape))}
    with _grad_mode(create_graph):
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node.vjp is None:
                continue
            for p, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
    return [grads.get(id(w), Tensor(np.zeros(w.shape))) for w in wrt]


def backward(root: Tensor, params: Iterable[Tensor]) -> dict[Tensor, np.ndarray]:
    """Map each leaf in ``params`` to d(root)/d(leaf) as a plain array."""
    params = list(params)
    gs = grad(root, params, create_graph=False)
    return {p: g.data for p, g in zip(params, gs)}


def input_jacobian(f: Callable[[Tensor], Tensor], x) -> Tensor:
    """Jacobian of ``f`` at ``x`` as differentiable nodes.

    For ``x`` of shape (m,) and ``f(x)`` of shape (p,) the result is (p, m).
    A leading batch axis is allowed when rows are mapped independently:
    ``x`` (n, m) -> ``f(x)`` (n, p) gives (n, p, m).
    """
    x = as_tensor(x)
    if not x.requires_grad:
        x = Tensor(x.data, requires_grad=True)
    y = f(x)
    if y.ndim != x.ndim:
        raise DimensionError("f must keep the batch layout of x")
    rows = []
    for r in range(y.shape[-1]):
        (g,) = grad(tsum(y[..., r]), [x], create_graph=True)
        rows.append(g)
    return stack(rows, axis=-2)


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------
@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamState]:
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError("params, grads and optimizer state disagree in length")
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"shape mismatch {p.shape} vs {g.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)
