"""Reverse-mode tape with surrogate gradients for spike nonlinearities.

A ``Var`` wraps a float64 array and remembers how it was computed; calling
:func:`backward` on a scalar ``Var`` walks the tape in reverse topological
order and accumulates gradients into the leaves.  Spike (Heaviside) nodes
backpropagate through a triangular surrogate; Bernoulli draws are treated as
constants (straight-through), so the estimate (1 - b) * I passes gradient
(1 - b) to I.
"""

from __future__ import annotations

import numpy as np

from . import numerics
from .numerics import Array, ShapeMismatchError


class Var:
    """Node in the computation tape."""

    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(self, value, parents=(), backward=None, requires_grad=False, name=""):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_var(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def parameter(value, name="") -> Var:
    return Var(value, requires_grad=True, name=name)


def _unbroadcast(grad: Array, shape) -> Array:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value + b.value,
        parents=(a, b),
        backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value - b.value,
        parents=(a, b),
        backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value * b.value,
        parents=(a, b),
        backward=lambda g: (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        ),
    )


def matmul(a: Var, w: Var) -> Var:
    """Product of [..., K] with [K, P]; fixed-order accumulation throughout."""
    a, w = as_var(a), as_var(w)
    value = numerics.matmul(a.value, w.value)

    def backward(g: Array):
        g2 = g.reshape(-1, g.shape[-1])
        a2 = a.value.reshape(-1, a.value.shape[-1])
        ga = numerics.matmul(g2, w.value.T).reshape(a.shape)
        gw = numerics.matmul(a2.T, g2)
        return ga, gw

    return Var(value, parents=(a, w), backward=backward)


def sigmoid(x) -> Var:
    x = as_var(x)
    y = numerics.sigmoid(x.value)
    return Var(y, parents=(x,), backward=lambda g: (g * y * (1.0 - y),))


def surrogate_grad(h, v_th: float, alpha: float) -> Array:
    """Triangular surrogate for the spike derivative.

    (1/alpha^2) * max(0, alpha - |h - v_th|): peak 1/alpha at threshold,
    support (v_th - alpha, v_th + alpha), evaluated at the pre-spike
    membrane h (post-reset u would zero out every fired position).
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    h = np.asarray(h, dtype=np.float64)
    return np.maximum(0.0, alpha - np.abs(h - v_th)) / (alpha * alpha)


_spike_log: list[Array] | None = None


class spike_logging:
    """Context that records every spike-node output (finite-diff bookkeeping)."""

    def __enter__(self):
        global _spike_log
        _spike_log = []
        return _spike_log

    def __exit__(self, *exc):
        global _spike_log
        _spike_log = None


def spike(h: Var, v_th: Var, alpha: float) -> Var:
    """Heaviside(h - v_th) forward; triangular surrogate backward.

    v_th receives the negated surrogate-weighted gradient (the spike argument
    is h - v_th).
    """
    h, v_th = as_var(h), as_var(v_th)
    o = (h.value >= v_th.value).astype(np.float64)
    if _spike_log is not None:
        _spike_log.append(o)

    def backward(g: Array):
        sg = surrogate_grad(h.value, float(v_th.value), alpha)
        weighted = g * sg
        return weighted, _unbroadcast(-weighted, v_th.shape)

    return Var(o, parents=(h, v_th), backward=backward)


def straight_through(I: Var, b: Array) -> Var:
    """(1 - b) * I with the draw b held constant, so dout/dI = (1 - b)."""
    I = as_var(I)
    keep = 1.0 - np.asarray(b, dtype=np.float64)
    return Var(keep * I.value, parents=(I,), backward=lambda g: (g * keep,))


def shift_time(x: Var) -> Var:
    """Delay one step along the leading (time) axis, zero-filled at t = 0."""
    x = as_var(x)
    value = np.zeros_like(x.value)
    value[1:] = x.value[:-1]

    def backward(g: Array):
        gx = np.zeros_like(g)
        gx[:-1] = g[1:]
        return (gx,)

    return Var(value, parents=(x,), backward=backward)


def slice_time(x: Var, t: int) -> Var:
    x = as_var(x)

    def backward(g: Array):
        gx = np.zeros_like(x.value)
        gx[t] = g
        return (gx,)

    return Var(x.value[t], parents=(x,), backward=backward)


def stack_time(rows) -> Var:
    rows = [as_var(r) for r in rows]
    value = np.stack([r.value for r in rows])
    return Var(value, parents=tuple(rows), backward=lambda g: tuple(g[t] for t in range(len(rows))))


def vsum(x, axis=None) -> Var:
    x = as_var(x)
    value = np.sum(x.value, axis=axis)

    def backward(g: Array):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(np.float64),)
        gx = np.expand_dims(g, axis)
        return (np.broadcast_to(gx, x.shape).astype(np.float64),)

    return Var(value, parents=(x,), backward=backward)


def vmean(x, axis=None) -> Var:
    x = as_var(x)
    if axis is None:
        count = x.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(vsum(x, axis), 1.0 / count)


def detach(x: Var) -> Var:
    """Cut the tape: same value, no gradient flows past this node."""
    return Var(as_var(x).value.copy())


def backward(loss: Var) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

    Traversal is reverse topological order with a fixed child ordering, so
    accumulation order (and hence the bits of the result) is deterministic.
    """
    loss = as_var(loss)
    if loss.value.ndim != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")

    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    grads: dict[int, Array] = {id(loss): np.asarray(1.0)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for p, pg in zip(node.parents, node._backward(g)):
            if not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


class ParamRegistry:
    """Named learnable tensors with gradients and momentum buffers."""

    def __init__(self):
        self._params: dict[str, Var] = {}
        self._momentum: dict[str, Array] = {}
        self._clamp_min: dict[str, float] = {}

    def register(self, name: str, var: Var, clamp_min: float | None = None) -> Var:
        if name in self._params:
            raise ValueError(f"parameter {name!r} registered twice")
        var.requires_grad = True
        var.name = name
        self._params[name] = var
        if clamp_min is not None:
            self._clamp_min[name] = clamp_min
        return var

    def __getitem__(self, name: str) -> Var:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def variables(self):
        return list(self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def sgd_step(self, lr: float, momentum: float = 0.0) -> None:
        """p <- p - lr * buffered grad; zero grads; clamp where configured."""
        if all(p.grad is None for p in self._params.values()):
            raise RuntimeError("sgd_step before backward: no gradients populated")
        for name, p in self._params.items():
            if p.grad is None:
                continue
            g = np.asarray(p.grad, dtype=np.float64).reshape(p.value.shape)
            if momentum != 0.0:
                buf = self._momentum.get(name)
                buf = g.copy() if buf is None else momentum * buf + g
                self._momentum[name] = buf
                g = buf
            p.value = p.value - lr * g
            if name in self._clamp_min:
                p.value = np.maximum(p.value, self._clamp_min[name])
            p.grad = None


def sgd_step(registry: ParamRegistry, lr: float, momentum: float = 0.0) -> None:
    registry.sgd_step(lr, momentum)


def finite_diff_check(fn, params, step: float = 1e-5):
    """Compare tape gradients of ``fn()`` against central finite differences.

    ``fn`` rebuilds the graph from the current parameter values and returns a
    scalar Var.  Coordinates where a perturbation flips any spike output are
    skipped (the loss is discontinuous there) and reported.

    Returns (max relative error, list of skipped (param, flat index)).
    """
    params = list(params)
    loss = fn()
    for p in params:
        p.grad = None
    backward(loss)
    tape_grads = [
        np.zeros_like(p.value) if p.grad is None else np.array(p.grad, dtype=np.float64)
        for p in params
    ]

    max_rel = 0.0
    skipped: list[tuple[str, int]] = []
    for pi, p in enumerate(params):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with spike_logging() as log_plus:
                f_plus = float(fn().value)
                log_plus = [o.copy() for o in log_plus]
            flat[i] = orig - step
            with spike_logging() as log_minus:
                f_minus = float(fn().value)
                log_minus = [o.copy() for o in log_minus]
            flat[i] = orig
            if len(log_plus) != len(log_minus) or any(
                not np.array_equal(a, b) for a, b in zip(log_plus, log_minus)
            ):
                skipped.append((p.name or f"param{pi}", i))
                continue
            fd = (f_plus - f_minus) / (2.0 * step)
            g = float(tape_grads[pi].reshape(-1)[i])
            denom = max(abs(fd), abs(g), 1e-8)
            max_rel = max(max_rel, abs(fd - g) / denom)
    return max_rel, skipped
