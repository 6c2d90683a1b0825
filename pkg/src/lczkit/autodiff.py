"""Minimal reverse-mode automatic differentiation on dense float64 tensors.

Op vocabulary: elementwise add/sub/mul, scalar scale/shift, matmul, affine
(matmul plus row-broadcast bias), relu, tanh, exp, log, square, abs,
mean/sum reductions, reshape/transpose, and stop_gradient for freezing.
No general broadcasting: elementwise ops require equal shapes, the only
broadcast is the bias row in `affine`.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, UsageError


class Tensor:
    """Node in the reverse-mode graph: value, adjoint, parents, local vjp."""

    __slots__ = ("value", "grad", "requires_grad", "op", "parents", "_vjp")

    def __init__(self, value, requires_grad=False, op="leaf", parents=(), vjp=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.parents = tuple(parents)
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape})"


def _node(value, op, parents, vjp):
    return Tensor(value, requires_grad=False, op=op, parents=parents, vjp=vjp)


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise UsageError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _node(a.value + b.value, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return _node(a.value - b.value, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    return _node(a.value * b.value, "mul", (a, b), lambda g: (g * b.value, g * a.value))


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return _node(a.value * k, "scale", (a,), lambda g: (g * k,))


def shift(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return _node(a.value + k, "shift", (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise UsageError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return _node(
        a.value @ b.value, "matmul", (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast over rows of x."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise UsageError(f"affine: incompatible shapes {x.shape} @ {w.shape}")
    if b.shape != (w.shape[1],):
        raise UsageError(f"affine: bias shape {b.shape} does not match {w.shape[1]} outputs")
    return _node(
        x.value @ w.value + b.value, "affine", (x, w, b),
        lambda g: (g @ w.value.T, x.value.T @ g, g.sum(axis=0)),
    )


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), "relu", (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)
    return _node(t, "tanh", (a,), lambda g: (g * (1.0 - t * t),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.value)
    return _node(e, "exp", (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    if np.any(a.value <= 0):
        raise NumericError("log: non-positive input")
    return _node(np.log(a.value), "log", (a,), lambda g: (g / a.value,))


def square(a: Tensor) -> Tensor:
    return _node(a.value * a.value, "square", (a,), lambda g: (g * 2.0 * a.value,))


def absval(a: Tensor) -> Tensor:
    return _node(np.abs(a.value), "abs", (a,), lambda g: (g * np.sign(a.value),))


def sum_all(a: Tensor) -> Tensor:
    return _node(a.value.sum(), "sum", (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.value.size
    return _node(a.value.mean(), "mean", (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def sum_axis(a: Tensor, axis: int) -> Tensor:
    def vjp(g):
        return (np.repeat(np.expand_dims(g, axis), a.shape[axis], axis=axis),)

    return _node(a.value.sum(axis=axis), "sum_axis", (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _node(a.value.reshape(shape), "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(a.value.transpose(axes), "transpose", (a,), lambda g: (g.transpose(inv),))


def stop_gradient(a: Tensor) -> Tensor:
    """Detach: value flows forward, no adjoint flows back."""
    return Tensor(a.value.copy(), requires_grad=False, op="stop_gradient")


def topo_order(root: Tensor):
    """Parents-before-children order of the subgraph reachable from root."""
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
            stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Populate adjoints of every node reachable from a scalar root."""
    if root.value.shape != ():
        raise UsageError(f"backward: root must be scalar, got shape {root.value.shape}")
    order = topo_order(root)
    for node in order:
        node.grad = np.zeros(node.shape)
    root.grad = np.ones(())
    for node in reversed(order):
        if node._vjp is None:
            continue
        for parent, pgrad in zip(node.parents, node._vjp(node.grad)):
            parent.grad = parent.grad + pgrad


def grad(root: Tensor, leaves):
    """backward() then collect the adjoints of the given leaves."""
    backward(root)
    return [leaf.grad.copy() for leaf in leaves]


def check_gradient(function, point, h=1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    `function` maps a Tensor to a scalar Tensor; analytic gradients come
    from the engine, the reference from central finite differences.
    """
    point = np.asarray(point, dtype=float)
    leaf = Tensor(point.copy(), requires_grad=True)
    out = function(leaf)
    if not np.isfinite(out.value):
        raise NumericError("check_gradient: non-finite function value")
    backward(out)
    analytic = leaf.grad.reshape(-1)
    flat = point.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        f_plus = function(Tensor(bumped.reshape(point.shape))).value
        bumped[i] = flat[i] - h
        f_minus = function(Tensor(bumped.reshape(point.shape))).value
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError("check_gradient: non-finite probe value")
        numeric[i] = (f_plus - f_minus) / (2.0 * h)
    denom = np.maximum(1.0, np.abs(analytic))
    if flat.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))


class Sgd:
    """Plain stochastic gradient descent over a list of parameter Tensors."""

    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = float(lr)

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.value -= self.lr * p.grad

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class Adam:
    """Adaptive moment optimizer; the default trainer for both networks."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * p.grad * p.grad
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
