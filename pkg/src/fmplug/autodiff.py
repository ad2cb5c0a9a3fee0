"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Node` wraps an immutable ``numpy`` array and remembers how it was
computed.  Calling :func:`backward` on a scalar node walks the recorded graph
in reverse topological order and returns the adjoint of every reachable leaf.

Only first derivatives are supported.  Broadcasting is limited to the numpy
rules needed by the velocity fields (scalar times array, ``(K, d)`` against
``(d,)`` and the like); adjoints are summed back onto the operand shape.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DimensionError, EvaluationError

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]


def _freeze(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class Node:
    """A value in a differentiable computation.

    Nodes are immutable.  ``requires_grad`` is true for leaves created with
    :func:`variable` and for anything computed from one.
    """

    __slots__ = ("value", "parents", "vjp", "requires_grad", "name", "__weakref__")

    __array_priority__ = 1000  # keep ndarray.__add__ etc. from taking over

    def __init__(self, value, parents: Tuple["Node", ...] = (), vjp=None,
                 requires_grad: bool = False, name: Optional[str] = None):
        self.value = value if isinstance(value, np.ndarray) and not value.flags.writeable \
            else _freeze(value)
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        tag = f" '{self.name}'" if self.name else ""
        return f"Node{tag}(shape={self.shape}, grad={self.requires_grad})"

    def __len__(self):
        return len(self.value)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        if p == 2:
            return square(self)
        if p == 0.5:
            return sqrt(self)
        raise NotImplementedError("only squares and square roots are supported")

    def __getitem__(self, index):
        return getitem(self, index)


def variable(value: ArrayLike, name: Optional[str] = None) -> Node:
    """A leaf whose gradient is requested."""
    return Node(value, requires_grad=True, name=name)


def constant(value: ArrayLike, name: Optional[str] = None) -> Node:
    return Node(value, requires_grad=False, name=name)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _owned(value) -> np.ndarray:
    # op outputs are fresh arrays (or views of frozen ones), so no copy is needed
    arr = np.asarray(value, dtype=np.float64)
    if arr.flags.writeable:
        arr.setflags(write=False)
    return arr


def _make(value, parents, vjp, name=None) -> Node:
    req = any(p.requires_grad for p in parents)
    if not req:
        return Node(_owned(value), name=name)
    return Node(_owned(value), parents, vjp, True, name)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Node, b: Node) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("add", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.value + b.value, (a, b), vjp)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("sub", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.value - b.value, (a, b), vjp)


def mul(a, b) -> Node:
    """Elementwise product with limited broadcasting."""
    a, b = as_node(a), as_node(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value

    def vjp(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return _make(av * bv, (a, b), vjp)


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("div", a, b)
    av, bv = a.value, b.value
    out = av / bv

    def vjp(g):
        return _unbroadcast(g / bv, a.shape), _unbroadcast(-g * out / bv, b.shape)

    return _make(out, (a, b), vjp)


def scale(a, c: float) -> Node:
    """Multiply by a fixed real number."""
    a = as_node(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,))


def neg(a) -> Node:
    a = as_node(a)
    return _make(-a.value, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# elementwise unary


def square(a) -> Node:
    a = as_node(a)
    av = a.value
    return _make(av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a) -> Node:
    a = as_node(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def exp(a) -> Node:
    a = as_node(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Node:
    a = as_node(a)
    av = a.value
    return _make(np.log(av), (a,), lambda g: (g / av,))


def tanh(a) -> Node:
    a = as_node(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def silu(a) -> Node:
    """``x * sigmoid(x)``."""
    a = as_node(a)
    av = a.value
    sig = 0.5 * (1.0 + np.tanh(0.5 * av))
    out = av * sig

    def vjp(g):
        return (g * (sig + out * (1.0 - sig)),)

    return _make(out, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Node:
    """``a @ b`` for 1-D and 2-D operands (numpy semantics)."""
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise DimensionError(f"matmul: operands must be 1-D or 2-D, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {av.shape} @ {bv.shape}")
    out = av @ bv
    need_a, need_b = a.requires_grad, b.requires_grad

    # constant operands (basis matrices, sensing matrices) get no adjoint
    def vjp(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 1:  # (d,) @ (d, k) -> (k,)
            return bv @ g if need_a else None, np.outer(av, g) if need_b else None
        if bv.ndim == 1:  # (n, d) @ (d,) -> (n,)
            return np.outer(g, bv) if need_a else None, av.T @ g if need_b else None
        return g @ bv.T if need_a else None, av.T @ g if need_b else None

    return _make(out, (a, b), vjp)


def matvec(m, x) -> Node:
    """Matrix-vector product ``m @ x`` with ``m`` of shape ``(p, q)`` and ``x`` of ``(q,)``."""
    m, x = as_node(m), as_node(x)
    if m.ndim != 2 or x.ndim != 1:
        raise DimensionError(f"matvec: expected (p, q) and (q,), got {m.shape} and {x.shape}")
    return matmul(m, x)


# ---------------------------------------------------------------------------
# reductions


def sum(a, axis: Optional[int] = None, keepdims: bool = False) -> Node:  # noqa: A001
    a = as_node(a)
    shape = a.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (a,), vjp)


def mean(a, axis: Optional[int] = None, keepdims: bool = False) -> Node:
    a = as_node(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def sqnorm(a) -> Node:
    """Squared Euclidean norm over all entries."""
    a = as_node(a)
    av = a.value
    return _make(np.dot(av.ravel(), av.ravel()), (a,), lambda g: (2.0 * g * av,))


def l2norm(a) -> Node:
    a = as_node(a)
    av = a.value
    nrm = np.sqrt(np.dot(av.ravel(), av.ravel()))

    def vjp(g):
        if nrm == 0.0:
            return (np.zeros_like(av),)
        return (g * av / nrm,)

    return _make(nrm, (a,), vjp)


def logsumexp(a, axis: int = -1) -> Node:
    a = as_node(a)
    av = a.value
    m = np.max(av, axis=axis, keepdims=True)
    e = np.exp(av - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    p = e / s

    def vjp(g):
        return (np.expand_dims(g, axis) * p,)

    return _make(out, (a,), vjp)


def softmax(a, axis: int = -1) -> Node:
    a = as_node(a)
    av = a.value
    e = np.exp(av - np.max(av, axis=axis, keepdims=True))
    p = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, (a,), vjp)


# ---------------------------------------------------------------------------
# structural


def reshape(a, shape) -> Node:
    a = as_node(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {old} to {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence, axis: int = 0) -> Node:
    nodes = [as_node(p) for p in parts]
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    sizes = [n.shape[axis] for n in nodes]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(out, tuple(nodes), vjp)


def stack(parts: Sequence, axis: int = 0) -> Node:
    nodes = [as_node(p) for p in parts]
    try:
        out = np.stack([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: {exc}") from None

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(nodes)))

    return _make(out, tuple(nodes), vjp)


def getitem(a, index) -> Node:
    """Basic slicing / integer indexing."""
    a = as_node(a)
    try:
        out = a.value[index]
    except IndexError as exc:
        raise DimensionError(f"slice: {exc}") from None
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), vjp)


slice_ = getitem


# ---------------------------------------------------------------------------
# backward pass


def _topological(root: Node):
    order, seen = [], set()
    stack_ = [(root, False)]
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


def backward(root: Node, wrt: Optional[Iterable[Node]] = None) -> Dict[Node, np.ndarray]:
    """Adjoints of a scalar ``root`` with respect to graph leaves.

    Returns a dict keyed by node.  Every node in ``wrt`` gets an entry; nodes
    the root does not depend on get zeros.  Without ``wrt`` all reachable
    leaves are returned.
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    wrt = None if wrt is None else list(wrt)
    keep = None if wrt is None else {id(n) for n in wrt}
    grads: Dict[int, np.ndarray] = {}
    leaves: Dict[int, Node] = {}
    if root.requires_grad:
        grads[id(root)] = np.ones(root.shape)
        for node in reversed(_topological(root)):
            key = id(node)
            g = grads.get(key)
            if g is None:
                continue
            if not node.parents:
                leaves[key] = node
                continue
            if keep is not None and key not in keep:
                del grads[key]
            for parent, pg in zip(node.parents, node.vjp(g)):
                if not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = np.asarray(pg, dtype=np.float64)
    if wrt is None:
        return {node: grads[key] for key, node in leaves.items()}
    return {node: grads.get(id(node), np.zeros(node.shape)) for node in wrt}


def grad(f: Callable[[Node], Node], x0: ArrayLike) -> Tuple[float, np.ndarray]:
    """Value and gradient of a scalar function at ``x0``."""
    x = variable(x0)
    out = f(x)
    return float(out.value), backward(out, [x])[x]


def grad_check(f: Callable[[Node], Node], x0: ArrayLike, step: float = 1e-5) -> float:
    """Largest relative disagreement between autodiff and central differences.

    The error per coordinate is ``|ad - fd| / max(1e-8, |fd|)``.
    """
    if step <= 0:
        raise ContractError("grad_check step must be positive")
    x0 = np.array(x0, dtype=np.float64)
    val, ad = grad(f, x0)
    if not np.isfinite(val) or not np.all(np.isfinite(ad)):
        raise EvaluationError("grad_check: non-finite value or gradient at x0")
    flat = x0.ravel()
    fd = np.empty(flat.size)
    for i in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += step
        xm[i] -= step
        fp = float(f(constant(xp.reshape(x0.shape))).value)
        fm = float(f(constant(xm.reshape(x0.shape))).value)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"grad_check: non-finite value near x0 (coordinate {i})")
        fd[i] = (fp - fm) / (2.0 * step)
    err = np.abs(ad.ravel() - fd) / np.maximum(1e-8, np.abs(fd))
    return float(err.max()) if err.size else 0.0
