"""Dense float64 arithmetic on a define-by-run reverse-mode tape.

Every value is a 2-D ``numpy.ndarray`` of dtype float64 wrapped in a
:class:`Node`. Operations append nodes to the :class:`Tape` in execution
order, so the node list is always topologically sorted. :func:`backward`
walks it in reverse and returns gradients for every registered parameter.

A fresh tape is built for each training step; nothing is cached.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

LOG_FLOOR = 1e-12
DEFAULT_LEAKY_SLOPE = 0.01


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class ParameterError(ValueError):
    """A scalar hyperparameter is outside its documented domain."""


class DeterminismError(RuntimeError):
    """A loss builder returned different values for identical inputs."""


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise DimensionError(f"expected a matrix, got array with shape {a.shape}")
    return a


class Node:
    __slots__ = ("value", "parents", "vjp", "name", "trainable", "index")

    def __init__(self, value, parents=(), vjp=None, name=None, trainable=False):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.trainable = trainable
        self.index = -1

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise DimensionError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.value.shape})"


class Tape:
    """Ordered operation record plus a registry of named leaves."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def _push(self, node: Node) -> Node:
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def param(self, name: str, value) -> Node:
        """Register a trainable leaf, or return the existing one of that name.

        Reusing the same leaf for repeated lookups is what makes parameter
        sharing (e.g. one classifier over two encoders) show up as summed
        gradients.
        """
        node = self.params.get(name)
        if node is not None:
            return node
        node = self._push(Node(as_matrix(value), name=name, trainable=True))
        self.params[name] = node
        return node

    def constant(self, value) -> Node:
        return self._push(Node(as_matrix(value)))

    def op(self, value: np.ndarray, parents: tuple, vjp) -> Node:
        return self._push(Node(value, parents, vjp))

    def lift(self, x) -> Node:
        return x if isinstance(x, Node) else self.constant(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _broadcast_shape(a, b, opname):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"{opname}: cannot broadcast {a} with {b}") from None


# -- elementary operations --------------------------------------------------


def add(tape: Tape, a, b) -> Node:
    a, b = tape.lift(a), tape.lift(b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return tape.op(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(tape: Tape, a, b) -> Node:
    a, b = tape.lift(a), tape.lift(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return tape.op(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(tape: Tape, a, b) -> Node:
    """Elementwise product with row/column broadcasting."""
    a, b = tape.lift(a), tape.lift(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    av, bv = a.value, b.value
    return tape.op(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(tape: Tape, a, c: float) -> Node:
    a = tape.lift(a)
    c = float(c)
    return tape.op(a.value * c, (a,), lambda g: (g * c,))


def matmul(tape: Tape, a, b) -> Node:
    a, b = tape.lift(a), tape.lift(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return tape.op(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def affine(tape: Tape, X, W, b) -> Node:
    """``X @ W + b`` with ``b`` broadcast over rows."""
    X, W, b = tape.lift(X), tape.lift(W), tape.lift(b)
    if X.shape[1] != W.shape[0]:
        raise DimensionError(f"affine: input {X.shape} does not match weights {W.shape}")
    if b.shape != (1, W.shape[1]):
        raise DimensionError(f"affine: bias {b.shape} does not match weights {W.shape}")
    xv, wv = X.value, W.value
    out = xv @ wv + b.value

    def vjp(g):
        return g @ wv.T, xv.T @ g, g.sum(axis=0, keepdims=True)

    return tape.op(out, (X, W, b), vjp)


def leaky_relu(tape: Tape, X, slope: float = DEFAULT_LEAKY_SLOPE) -> Node:
    if not 0.0 < slope < 1.0:
        raise ParameterError(f"leaky slope must lie in (0, 1), got {slope}")
    X = tape.lift(X)
    # gradient 1 at exactly zero
    d = np.where(X.value >= 0.0, 1.0, slope)
    return tape.op(X.value * d, (X,), lambda g: (g * d,))


def sigmoid(tape: Tape, X) -> Node:
    X = tape.lift(X)
    x = X.value
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return tape.op(s, (X,), lambda g: (g * s * (1.0 - s),))


def clip(tape: Tape, X, lo: float, hi: float) -> Node:
    X = tape.lift(X)
    x = X.value
    inside = ((x >= lo) & (x <= hi)).astype(np.float64)
    return tape.op(np.clip(x, lo, hi), (X,), lambda g: (g * inside,))


def log(tape: Tape, X, floor: float = LOG_FLOOR) -> Node:
    """Natural log with the argument clamped to ``floor`` (zero gradient below it)."""
    X = tape.lift(X)
    x = X.value
    safe = np.maximum(x, floor)
    live = (x >= floor).astype(np.float64)
    return tape.op(np.log(safe), (X,), lambda g: (g * live / safe,))


def square(tape: Tape, X) -> Node:
    X = tape.lift(X)
    x = X.value
    return tape.op(x * x, (X,), lambda g: (2.0 * g * x,))


def total(tape: Tape, X) -> Node:
    """Sum of all entries as a 1x1 node."""
    X = tape.lift(X)
    shape = X.shape
    return tape.op(np.array([[X.value.sum()]]), (X,),
                   lambda g: (np.full(shape, g[0, 0]),))


def mean(tape: Tape, X) -> Node:
    X = tape.lift(X)
    n = X.value.size
    if n == 0:
        raise DimensionError("mean of an empty matrix")
    return scale(tape, total(tape, X), 1.0 / n)


def check_temperature(temperature: float) -> float:
    temperature = float(temperature)
    if not temperature > 0.0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    return temperature


def softmax_array(x: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row softmax of a plain array, max-shifted for stability."""
    z = x / check_temperature(temperature)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(tape: Tape, X, temperature: float = 1.0) -> Node:
    X = tape.lift(X)
    p = softmax_array(X.value, temperature)
    t = float(temperature)

    def vjp(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - inner) / t,)

    return tape.op(p, (X,), vjp)


def log_softmax_rows(tape: Tape, X, temperature: float = 1.0) -> Node:
    X = tape.lift(X)
    z = X.value / check_temperature(temperature)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    t = float(temperature)

    def vjp(g):
        return ((g - p * g.sum(axis=1, keepdims=True)) / t,)

    return tape.op(out, (X,), vjp)


def pick(tape: Tape, X, cols) -> Node:
    """Column ``cols[i]`` of row ``i``, as an n x 1 node."""
    X = tape.lift(X)
    cols = np.asarray(cols, dtype=np.int64)
    n = X.shape[0]
    if cols.shape != (n,):
        raise DimensionError(f"pick: {cols.shape[0] if cols.ndim else 0} indices for {n} rows")
    rows = np.arange(n)
    shape = X.shape

    def vjp(g):
        out = np.zeros(shape)
        out[rows, cols] = g[:, 0]
        return (out,)

    return tape.op(X.value[rows, cols].reshape(n, 1), (X,), vjp)


def take_rows(tape: Tape, X, index) -> Node:
    X = tape.lift(X)
    index = np.asarray(index, dtype=np.int64).reshape(-1)
    shape = X.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return tape.op(X.value[index], (X,), vjp)


def concat_rows(tape: Tape, *parts) -> Node:
    parts = tuple(tape.lift(p) for p in parts)
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1:
        raise DimensionError(f"concat_rows: widths differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def vjp(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return tape.op(np.vstack([p.value for p in parts]), parts, vjp)


# -- differentiation --------------------------------------------------------


def backward(tape: Tape, loss: Node, wrt=None) -> dict[str, np.ndarray]:
    """Gradients of ``loss`` for the trainable leaves on ``tape``.

    ``wrt`` restricts the result (and the traversal) to the named leaves;
    by default every registered parameter is returned. Leaves the loss does
    not reach get zero gradients. The tape is not modified, so several
    losses may be differentiated on one forward pass.
    """
    if loss.shape != (1, 1):
        raise DimensionError(f"backward needs a 1x1 loss, got {loss.shape}")
    if loss.index < 0 or loss.index >= len(tape.nodes) or tape.nodes[loss.index] is not loss:
        raise ValueError("loss node does not belong to this tape")
    names = list(tape.params) if wrt is None else list(wrt)

    # nodes whose gradient can reach a requested leaf
    targets = {tape.params[n].index for n in names if n in tape.params}
    live = np.zeros(loss.index + 1, dtype=bool)
    for node in tape.nodes[:loss.index + 1]:
        live[node.index] = node.index in targets or any(live[p.index] for p in node.parents)

    grads: dict[int, np.ndarray] = {loss.index: np.ones((1, 1))}
    for i in range(loss.index, -1, -1):
        node = tape.nodes[i]
        if node.trainable or not live[i]:
            continue
        g = grads.pop(i, None)
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            j = parent.index
            if not live[j]:
                continue
            grads[j] = grads[j] + pg if j in grads else pg

    out = {}
    for name in names:
        node = tape.params.get(name)
        if node is None:
            raise KeyError(f"no parameter named {name!r} on this tape")
        g = grads.get(node.index)
        out[name] = np.zeros_like(node.value) if g is None else g
    return out


LossBuilder = Callable[[Mapping[str, np.ndarray]], "tuple[Tape, Node]"]


def grad_check(build: LossBuilder, params: Mapping[str, np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``build(params)`` must construct a fresh tape from the given parameter
    arrays (registering them under the same names) and return
    ``(tape, loss)``. The error for one coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    params = {k: as_matrix(v).copy() for k, v in params.items()}

    tape, loss = build(params)
    _, again = build(params)
    if loss.item() != again.item():
        raise DeterminismError(f"builder returned {loss.item()!r} then {again.item()!r}")
    analytic = backward(tape, loss)

    worst = 0.0
    for name, value in params.items():
        grad = analytic.get(name, np.zeros_like(value))
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + eps
            hi = build(params)[1].item()
            value[idx] = orig - eps
            lo = build(params)[1].item()
            value[idx] = orig
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(grad[idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, float(err))
    return worst
