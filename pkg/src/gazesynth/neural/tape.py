"""Reverse-mode automatic differentiation over numpy arrays.

Every differentiable quantity is a :class:`Tensor`. Operations on tensors that
require gradients record their parents and a backward rule; :func:`tape_backward`
walks the resulting graph once in reverse topological order.
"""

from __future__ import annotations

import numpy as np


class ContractError(ValueError):
    """A precondition on shapes or arguments was violated."""


class NonFiniteGradientError(FloatingPointError):
    """A NaN or Inf gradient was produced during the backward pass."""


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad, shape):
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


class Tensor:
    """A node on the differentiation tape.

    ``backward_rule`` maps the output gradient to a tuple of parent gradients
    (``None`` for parents that need none).
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_rule", "name", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, parents=(), backward_rule=None, op="leaf"):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)
        self.backward_rule = backward_rule
        self.name = name
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        return mul(self, power(other, -1.0))

    def __rtruediv__(self, other):
        return mul(as_tensor(other), power(self, -1.0))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data, parents, backward_rule, op):
    """Create an output node; constant if no parent requires a gradient."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_rule=backward_rule, op=op)
    return Tensor(data, op=op)


# elementwise and reduction primitives ------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), rule, "add")


def neg(a):
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def rule(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), rule, "mul")


def power(a, exponent):
    a = as_tensor(a)
    exponent = float(exponent)
    out = a.data ** exponent

    def rule(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return make_node(out, (a,), rule, "pow")


def exp(a):
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a):
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    out = _sigmoid(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a):
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope=0.2):
    scale = np.where(a.data > 0, 1.0, slope)
    return make_node(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def clamp(a, lo, hi):
    """Clip values; gradient passes only where the input lies inside [lo, hi]."""
    mask = (a.data >= lo) & (a.data <= hi)
    return make_node(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clamp")


def magnitude(re, im):
    """Elementwise sqrt(re^2 + im^2); the gradient at zero magnitude is taken as zero."""
    out = np.hypot(re.data, im.data)
    safe = np.where(out > 0, out, 1.0)
    nz = out > 0

    def rule(g):
        scaled = np.where(nz, g / safe, 0.0)
        return scaled * re.data, scaled * im.data

    return make_node(out, (re, im), rule, "magnitude")


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(out, (a,), rule, "sum")


def mean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1) if a.data.size else 1.0

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_node(out, (a,), rule, "mean")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ContractError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_node(a.data @ b.data, (a, b), rule, "matmul")


def reshape(a, shape):
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    inverse = None if axes is None else tuple(np.argsort(axes))
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def getitem(a, index):
    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return make_node(a.data[index], (a,), rule, "getitem")


# backward pass -------------------------------------------------------------

def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def tape_backward(root):
    """Back-propagate from a scalar ``root``.

    Populates ``.grad`` on every reachable node that requires a gradient and
    returns ``{name: gradient}`` for the named leaves (the trainable parameters).
    """
    if root.data.shape != ():
        raise ContractError(f"backward root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    order = _topological_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones(())
    leaves = {}
    for node in reversed(order):
        if node.backward_rule is None:
            if node.name is not None:
                leaves[node.name] = node.grad
            continue
        parent_grads = node.backward_rule(node.grad)
        for parent, g in zip(node.parents, parent_grads):
            if g is None or not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=np.float64)
            label = parent.name or f"{parent.op} (input to {node.name or node.op})"
            if g.shape != parent.shape:
                raise ContractError(f"gradient shape {g.shape} does not match node {label} of shape {parent.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient at node {label}")
            if parent.grad is None:
                parent.grad = g.copy()
            else:
                parent.grad = parent.grad + g
    return leaves
