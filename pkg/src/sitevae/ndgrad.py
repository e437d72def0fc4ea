"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Only what a fully connected VAE needs: matrix products, a handful of
elementwise maps, row-wise softmax, reductions and column concatenation.
Every forward op records a closure computing the vector-Jacobian product;
``Tensor.backward`` walks the recorded graph once in reverse topological order.

Gradients accumulate into ``.grad`` across calls until ``zero_grad`` is used.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ArithmeticError):
    """Input outside the mathematical domain of an op (e.g. log of 0)."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: Sequence["Tensor"] = (), vjp: Callable | None = None):
        arr = np.array(data, dtype=np.float64)  # always a private copy
        arr.setflags(write=False)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = tuple(parents)
        self._vjp = vjp

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))  # raises on non-scalars

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operators ------------------------------------------------------
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- differentiation ------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        ``self`` must be a scalar unless an explicit upstream ``grad`` is given.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, op=op, parents=parents if rg else (),
                  vjp=vjp if rg else None)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, name: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------------------
# binary ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    ga, gb = a.requires_grad, b.requires_grad
    return _make(A @ B, "matmul", (a, b),
                 lambda g: (g @ B.T if ga else None, A.T @ g if gb else None))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    A, B = a.data, b.data
    return _make(A * B, "mul", (a, b),
                 lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def scale(a, c: float) -> Tensor:
    """Multiply by a constant (non-differentiable) scalar."""
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, "scale", (a,), lambda g: (g * c,))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.data.ndim != 2 for p in parts):
        raise ShapeError(f"concat_cols: incompatible shapes {[p.shape for p in parts]}")
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def vjp(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=1), "concat", parts, vjp)


# ---------------------------------------------------------------------------
# unary ops


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive input")
    X = a.data
    return _make(np.log(X), "log", (a,), lambda g: (g / X,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient 0 at 0
    return _make(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    X = a.data
    out = np.empty_like(X)
    pos = X >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-X[pos]))
    e = np.exp(X[~pos])
    out[~pos] = e / (1.0 + e)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def square(a) -> Tensor:
    a = as_tensor(a)
    X = a.data
    return _make(X * X, "square", (a,), lambda g: (2.0 * g * X,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sgn = np.sign(a.data)  # subgradient 0 at the kink
    return _make(np.abs(a.data), "abs", (a,), lambda g: (g * sgn,))


def softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("softmax_rows expects a matrix")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _make(p, "softmax", (a,), vjp)


def log_softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("log_softmax_rows expects a matrix")
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, "log_softmax", (a,),
                 lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def straight_through_onehot(soft) -> Tensor:
    """Forward: one-hot of the row argmax. Backward: identity onto ``soft``."""
    soft = as_tensor(soft)
    hard = np.zeros_like(soft.data)
    hard[np.arange(soft.shape[0]), soft.data.argmax(axis=1)] = 1.0
    return _make(hard, "straight_through", (soft,), lambda g: (g,))


# ---------------------------------------------------------------------------
# reductions


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _make(np.array(a.data.sum()), "sum", (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def sum_rows(a) -> Tensor:
    """Per-row sum of a matrix: (n, m) -> (n,)."""
    a = as_tensor(a)
    m = a.shape[1]
    return _make(a.data.sum(axis=1), "sum_rows", (a,),
                 lambda g: (np.repeat(g[:, None], m, axis=1),))


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    shape = a.shape
    return _make(np.array(a.data.mean()), "mean", (a,),
                 lambda g: (np.full(shape, float(g) / n),))


# ---------------------------------------------------------------------------
# helpers


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name; ``scale_by_scalar`` takes (tensor, float)."""
    table = {
        "add": add, "sub": sub, "mul": mul, "exp": exp, "log": log,
        "relu": relu, "softmax_rows": softmax_rows, "scale_by_scalar": scale,
        "sigmoid": sigmoid, "square": square, "abs": absolute,
    }
    try:
        fn = table[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)
