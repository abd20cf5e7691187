"""Dense 2-D tensors with tape-style reverse-mode differentiation.

Every value is a float64 matrix. Operations record their parents and a
backward rule; ``Tensor.backward`` walks the graph in reverse topological
order and accumulates gradients into every node that requires them.

The finite-difference side of ``check_gradients`` re-evaluates forward passes
in x87 extended precision (``np.longdouble``) when the platform has it, which
pushes the rounding floor of a 1e-5 central difference far below the 1e-5
relative-error budget.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

LN_EPS = 1e-5
BCE_EPS = 1e-7
NORM_EPS = 1e-12


_GRAD_ENABLED = True
_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextlib.contextmanager
def extended_precision() -> Iterator[None]:
    """Build new tensors as ``np.longdouble`` and record no backward rules."""
    global _DTYPE
    prev, _DTYPE = _DTYPE, np.longdouble
    try:
        with no_grad():
            yield
    finally:
        _DTYPE = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording backward rules."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=_DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray) -> None:
        self._grad = np.asarray(value, dtype=np.float64)

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other) -> "Tensor":
        return add(self, _lift(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return sub(self, _lift(other, self.shape))

    def __rsub__(self, other) -> "Tensor":
        return sub(_lift(other, self.shape), self)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    # -- autodiff ---------------------------------------------------------

    def backward(self) -> None:
        """Populate gradients of every ancestor that requires them.

        Repeated calls accumulate; call ``zero_grad`` on parameters between
        steps.
        """
        if self.shape != (1, 1):
            raise ShapeError(f"backward() needs a scalar (1x1) node, got {self.shape}")
        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.ones((1, 1))}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _lift(value, shape) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(shape, float(value)))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = ""
    out._grad = None
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- primitives -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,))


def add_row(x: Tensor, row: Tensor) -> Tensor:
    """Add a 1 x cols row vector to every row of ``x``."""
    if row.shape != (1, x.cols):
        raise ShapeError(f"add_row: expected row of shape (1, {x.cols}), got {row.shape}")
    return _node(x.data + row.data, (x, row), lambda g: (g, g.sum(axis=0, keepdims=True)))


def transpose(a: Tensor) -> Tensor:
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,))


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 node."""
    shape = a.shape
    return _node(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean(a: Tensor) -> Tensor:
    shape = a.shape
    n = a.data.size
    return _node(np.array([[a.data.mean()]]), (a,), lambda g: (np.full(shape, g[0, 0] / n),))


def sum_rows(a: Tensor) -> Tensor:
    """Column sums: collapses the row axis into a 1 x cols row."""
    rows = a.rows
    return _node(a.data.sum(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g, rows, axis=0),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


def softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _node(s, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Row-wise layer normalization followed by an affine map.

    A constant row normalizes to exactly zero before the affine map.
    """
    n = x.cols
    if gain.shape != (1, n) or bias.shape != (1, n):
        raise ShapeError(
            f"layer_norm: gain/bias must be (1, {n}), got {gain.shape} and {bias.shape}"
        )
    xd = x.data
    centered = xd - xd.mean(axis=1, keepdims=True)
    constant = xd.max(axis=1) == xd.min(axis=1)
    centered[constant] = 0.0
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv_std
    gd = gain.data
    out = xhat * gd + bias.data

    def backward(g):
        dxhat = g * gd
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _node(out, (x, gain, bias), backward)


def l2_normalize_rows(x: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Scale each row to unit L2 norm; an all-zero row uses norm ``eps``."""
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    zero = norms < eps
    norms = np.where(zero, eps, norms)
    u = x.data / norms

    def backward(g):
        radial = (g * u).sum(axis=1, keepdims=True)
        radial = np.where(zero, 0.0, radial)
        return ((g - u * radial) / norms,)

    return _node(u, (x,), backward)


def _check_binary(y: np.ndarray, op: str) -> None:
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError(f"{op}: targets must be 0 or 1")


def bce_loss(p: Tensor, y, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross entropy of probabilities ``p`` against 0/1 targets."""
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if y.ndim == 1:
        y = y.reshape(1, -1)
    if y.shape != p.shape:
        raise ShapeError(f"bce_loss: shape mismatch {p.shape} vs {y.shape}")
    _check_binary(y, "bce_loss")
    pc = np.clip(p.data, eps, 1.0 - eps)
    inside = (p.data > eps) & (p.data < 1.0 - eps)
    n = p.data.size
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).mean()

    def backward(g):
        return (g[0, 0] * inside * (pc - y) / (pc * (1.0 - pc)) / n,)

    return _node(np.array([[loss]]), (p,), backward)


def mse_loss(a: Tensor, b) -> Tensor:
    bd = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if bd.shape != a.shape:
        raise ShapeError(f"mse_loss: shape mismatch {a.shape} vs {bd.shape}")
    diff = a.data - bd
    n = diff.size
    return _node(
        np.array([[(diff * diff).mean()]]), (a,), lambda g: (g[0, 0] * 2.0 * diff / n,)
    )


# -- verification -----------------------------------------------------------


def check_gradients(
    f: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-5,
    extended: bool = True,
) -> float:
    """Compare backprop gradients of ``f(*inputs)`` with central differences.

    Returns the maximum over all input entries of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    Analytic gradients are always float64. With ``extended`` the perturbed
    forward passes run in ``np.longdouble``; otherwise in float64.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    out = f(*inputs)
    if out.shape != (1, 1):
        raise ShapeError(f"check_gradients: f must return a scalar, got {out.shape}")
    out.backward()
    analytic = [t.grad.copy() for t in inputs]
    originals = [t.data for t in inputs]
    dtype = np.longdouble if extended else np.float64
    h = dtype(step)
    worst = 0.0
    ctx = extended_precision() if extended else no_grad()
    try:
        with ctx:
            for t in inputs:
                t.data = t.data.astype(dtype)
            for t, grad in zip(inputs, analytic):
                flat = t.data.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h
                    up = f(*inputs).data[0, 0]
                    flat[i] = orig - h
                    down = f(*inputs).data[0, 0]
                    flat[i] = orig
                    numeric = float((up - down) / (2 * h))
                    a = float(grad.reshape(-1)[i])
                    worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
    finally:
        for t, data in zip(inputs, originals):
            t.data = data
            t.zero_grad()
    return worst


# -- optimization -----------------------------------------------------------


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, p in params.items():
        if name not in grads:
            raise KeyError(f"adam_step: missing gradient for {name!r}")
        if grads[name].shape != p.shape:
            raise ShapeError(
                f"adam_step: gradient for {name!r} has shape {grads[name].shape}, "
                f"parameter has {p.shape}"
            )
        m = state.first_moment.get(name)
        if m is not None and m.shape != p.shape:
            raise ShapeError(f"adam_step: moment shape mismatch for {name!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        m = state.first_moment.setdefault(name, np.zeros_like(p))
        v = state.second_moment.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


class Adam:
    """Adam over a name -> Tensor parameter table, reading ``.grad``."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(learning_rate=lr, beta1=beta1, beta2=beta2, epsilon=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        adam_step(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items()},
            self.state,
        )
