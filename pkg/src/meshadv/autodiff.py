"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every :class:`Node` created from its variables in
creation order, which is already a topological order, so ``backward`` is a
single reversed sweep.

    >>> tape = Tape()
    >>> x = tape.variable(3.0)
    >>> grads = tape.backward(x * x)
    >>> float(grads[x])
    6.0
"""

from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

ACOS_CLAMP = 1.0 - 1e-9


class GradientError(ValueError):
    """Raised for invalid differentiation requests (shape errors, non-scalar outputs)."""


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
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
    """A value recorded on a tape together with its local derivative rule."""

    __slots__ = ("value", "parents", "rule", "tape", "requires_grad", "_vjp", "grad")
    __array_priority__ = 100.0

    def __init__(self, value, parents=(), rule="leaf", tape=None, vjp=None,
                 requires_grad=False):
        self.value = value
        self.parents = parents
        self.rule = rule
        self.tape = tape
        self.requires_grad = requires_grad
        self._vjp = vjp
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Node(rule={self.rule!r}, shape={self.value.shape})"

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

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Ordered record of nodes; one tape per thread of computation."""

    def __init__(self):
        self.nodes: list[Node] = []

    def variable(self, value) -> Node:
        """Create a differentiable leaf."""
        node = Node(_as_array(value).copy(), tape=self, requires_grad=True)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return Node(_as_array(value), tape=self)

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.rule == "leaf"]

    def backward(self, output: Node) -> dict[Node, np.ndarray]:
        """Propagate d(output)/d(node) to every leaf variable of this tape.

        Returns a mapping from each leaf to its gradient; leaves that do not
        influence ``output`` get zeros.  Intermediate nodes are dropped from
        the tape afterwards so the leaves can be reused for another pass.
        """
        if not isinstance(output, Node):
            raise GradientError("backward needs a Node output")
        if output.value.size != 1:
            raise GradientError(f"backward needs a scalar output, got shape {output.value.shape}")
        grads: dict[int, np.ndarray] = {}
        if output.requires_grad:
            grads[id(output)] = np.ones_like(output.value)
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None) if node.rule != "leaf" else None
            if g is None or node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        result = {}
        leaves = self.leaves()
        for leaf in leaves:
            g = grads.get(id(leaf))
            leaf.grad = np.zeros_like(leaf.value) if g is None else np.asarray(g).reshape(leaf.value.shape)
            result[leaf] = leaf.grad
        self.nodes = leaves
        return result


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Node) and x.tape is not None:
            return x.tape
    return None


def _wrap(x, tape) -> Node:
    if isinstance(x, Node):
        return x
    return Node(_as_array(x), tape=tape)


def _record(value, parents, rule, vjp) -> Node:
    tape = _tape_of(*parents)
    requires = any(p.requires_grad for p in parents)
    node = Node(value, tuple(parents), rule, tape, vjp if requires else None, requires)
    if requires and tape is not None:
        tape.nodes.append(node)
    return node


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else _as_array(x)


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)
    sa, sb = a.value.shape, b.value.shape
    return _record(a.value + b.value, (a, b), "add",
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)
    sa, sb = a.value.shape, b.value.shape
    return _record(a.value - b.value, (a, b), "sub",
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def neg(a) -> Node:
    a = _wrap(a, None)
    return _record(-a.value, (a,), "neg", lambda g: (-g,))


def mul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)
    av, bv = a.value, b.value
    return _record(av * bv, (a, b), "mul",
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)
    av, bv = a.value, b.value
    if np.any(bv == 0.0):
        raise ZeroDivisionError("division by exact zero")
    out = av / bv

    def vjp(g):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)

    return _record(out, (a, b), "div", vjp)


def square(a) -> Node:
    return mul(a, a)


def relu(a) -> Node:
    a = _wrap(a, None)
    out = np.maximum(a.value, 0.0)
    return _record(out, (a,), "relu", lambda g: (g * (out > 0),))


def exp(a) -> Node:
    a = _wrap(a, None)
    out = np.exp(a.value)
    return _record(out, (a,), "exp", lambda g: (g * out,))


def log(a) -> Node:
    a = _wrap(a, None)
    av = a.value
    return _record(np.log(av), (a,), "log", lambda g: (g / av,))


def sin(a) -> Node:
    a = _wrap(a, None)
    av = a.value
    return _record(np.sin(av), (a,), "sin", lambda g: (g * np.cos(av),))


def cos(a) -> Node:
    a = _wrap(a, None)
    av = a.value
    return _record(np.cos(av), (a,), "cos", lambda g: (-g * np.sin(av),))


def sqrt(a) -> Node:
    a = _wrap(a, None)
    out = np.sqrt(a.value)
    return _record(out, (a,), "sqrt", lambda g: (g * 0.5 / out,))


def acos(a) -> Node:
    """Arc-cosine with the argument clamped to [-1 + 1e-9, 1 - 1e-9]."""
    a = _wrap(a, None)
    clipped = np.clip(a.value, -ACOS_CLAMP, ACOS_CLAMP)
    deriv = -1.0 / np.sqrt(1.0 - clipped * clipped)
    return _record(np.arccos(clipped), (a,), "acos", lambda g: (g * deriv,))


# --------------------------------------------------------------------------
# reductions and linear algebra


def sum(a, axis=None, keepdims=False) -> Node:  # noqa: A001
    a = _wrap(a, None)
    shape = a.value.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _record(a.value.sum(axis=axis, keepdims=keepdims), (a,), "sum", vjp)


def mean(a, axis=None, keepdims=False) -> Node:
    a = _wrap(a, None)
    count = a.value.size if axis is None else np.prod([a.value.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max(a, axis=None) -> Node:  # noqa: A001
    """Max-reduce; the adjoint goes to the first (lowest-index) maximiser."""
    a = _wrap(a, None)
    av = a.value
    if axis is None:
        idx = np.argmax(av)
        out = av.reshape(-1)[idx]

        def vjp(g):
            full = np.zeros(av.size)
            full[idx] = g
            return (full.reshape(av.shape),)

        return _record(np.asarray(out), (a,), "max", vjp)
    axis = axis % av.ndim
    idx = np.expand_dims(np.argmax(av, axis=axis), axis)
    out = np.take_along_axis(av, idx, axis=axis)

    def vjp(g):
        full = np.zeros_like(av)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _record(np.squeeze(out, axis), (a,), "max", vjp)


def matmul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise GradientError("matmul needs operands of rank >= 2; use dot for vectors")
    if av.shape[-1] != bv.shape[-2]:
        raise GradientError(f"matmul shape mismatch {av.shape} @ {bv.shape}")

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape) if b.requires_grad else None
        return ga, gb

    return _record(av @ bv, (a, b), "matmul", vjp)


def dot(a, b, axis=-1) -> Node:
    """Inner product along ``axis`` (row-wise for stacked vectors)."""
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)
    if a.value.shape[axis] != b.value.shape[axis]:
        raise GradientError(f"dot shape mismatch {a.value.shape} vs {b.value.shape}")
    return sum(mul(a, b), axis=axis)


def cross(a, b) -> Node:
    """Cross product of 3-vectors along the last axis."""
    tape = _tape_of(a, b)
    a, b = _wrap(a, tape), _wrap(b, tape)
    av, bv = a.value, b.value
    if av.shape[-1] != 3 or bv.shape[-1] != 3:
        raise GradientError("cross needs 3-vectors on the last axis")
    out = np.cross(av, bv)

    def vjp(g):
        return _unbroadcast(np.cross(bv, g), av.shape), _unbroadcast(np.cross(g, av), bv.shape)

    return _record(out, (a, b), "cross", vjp)


def norm(a, axis=-1) -> Node:
    """Euclidean norm; the gradient at an exactly-zero vector is taken as zero."""
    a = _wrap(a, None)
    av = a.value
    out = np.sqrt(np.sum(av * av, axis=axis))

    def vjp(g):
        safe = np.expand_dims(out, axis)
        zero = safe == 0.0
        if np.any(zero):
            logger.warning("norm gradient at zero vector; using zero subgradient")
            safe = np.where(zero, 1.0, safe)
        return (np.expand_dims(g, axis) * av / safe * ~zero,)

    return _record(out, (a,), "norm", vjp)


def softmax_cross_entropy(logits, labels) -> Node:
    """Mean of -log softmax(logits)[label]; 1-D logits give a single term."""
    logits = _wrap(logits, None)
    lv = logits.value
    single = lv.ndim == 1
    lv2 = lv[None, :] if single else lv
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape[0] != lv2.shape[0]:
        raise GradientError("one label per row of logits is required")
    if np.any(labels < 0) or np.any(labels >= lv2.shape[1]):
        raise GradientError(f"label out of range for {lv2.shape[1]} classes")
    shift = lv2 - lv2.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shift).sum(axis=1))
    rows = np.arange(lv2.shape[0])
    losses = logsumexp - shift[rows, labels]
    probs = np.exp(shift - logsumexp[:, None])

    def vjp(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        d *= g / lv2.shape[0]
        return (d[0] if single else d,)

    return _record(np.asarray(losses.mean()), (logits,), "softmax_ce", vjp)


# --------------------------------------------------------------------------
# structural ops


def reshape(a, shape) -> Node:
    a = _wrap(a, None)
    old = a.value.shape
    return _record(a.value.reshape(shape), (a,), "reshape", lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Node:
    a = _wrap(a, None)
    inv = None if axes is None else np.argsort(axes)
    return _record(np.transpose(a.value, axes), (a,), "transpose",
                   lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Node:
    a = _wrap(a, None)
    shape = a.value.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _record(a.value[index], (a,), "getitem", vjp)


def take(a, indices) -> Node:
    """Gather rows: ``a[indices]`` along axis 0 (indices may repeat)."""
    a = _wrap(a, None)
    idx = np.asarray(indices, dtype=np.int64)
    n = a.value.shape[0]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise IndexError(f"take index out of range for {n} rows")
    shape = a.value.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _record(a.value[idx], (a,), "take", vjp)


def scatter_add(a, indices, size) -> Node:
    """Sum rows of ``a`` into ``size`` buckets given by ``indices``."""
    a = _wrap(a, None)
    idx = np.asarray(indices, dtype=np.int64)
    out = np.zeros((size,) + a.value.shape[1:])
    np.add.at(out, idx, a.value)
    return _record(out, (a,), "scatter_add", lambda g: (g[idx],))


def stack(items: Sequence, axis=0) -> Node:
    tape = _tape_of(*items)
    nodes = [_wrap(x, tape) for x in items]
    out = np.stack([n.value for n in nodes], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(nodes)))

    return _record(out, tuple(nodes), "stack", vjp)


def concat(items: Sequence, axis=0) -> Node:
    tape = _tape_of(*items)
    nodes = [_wrap(x, tape) for x in items]
    sizes = [n.value.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([n.value for n in nodes], axis=axis)
    return _record(out, tuple(nodes), "concat",
                   lambda g: tuple(np.split(g, splits, axis=axis)))


# --------------------------------------------------------------------------


def value_and_grad(f: Callable[[Node], Node], x) -> tuple[float, np.ndarray]:
    """Evaluate ``f`` on a fresh tape and return its value and gradient at ``x``."""
    tape = Tape()
    var = tape.variable(x)
    out = f(var)
    grads = tape.backward(out)
    return float(out.value), grads[var]


def finite_diff_check(f: Callable[[Node], Node], x, h: float = 1e-5) -> float:
    """Max relative error between the tape gradient of ``f`` and central differences.

    The error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = _as_array(x)
    _, analytic = value_and_grad(f, x)
    numeric = np.zeros_like(x)
    flat = numeric.reshape(-1)
    for i in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        fp = float(f(Tape().variable(xp.reshape(x.shape))).value)
        fm = float(f(Tape().variable(xm.reshape(x.shape))).value)
        flat[i] = (fp - fm) / (2.0 * h)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
