"""Dense 2-D tensors with a reverse-mode gradient tape.

Every value is a float64 matrix. Operations record their inputs and a
backward closure; ``Tensor.backward`` replays them in reverse topological
order and accumulates gradients additively, so a tensor used twice receives
the sum of both path gradients.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

LEAKY_SLOPE = 0.2
MAGIC = b"SLIPT1"


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _as_matrix(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got {arr.ndim}")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # Row vectors (1×n), column vectors (m×1) and scalars (1×1) broadcast.
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


class Tensor:
    """A float64 matrix that can take part in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_matrix(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("operation produced a non-finite value")
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @staticmethod
    def wrap(x) -> Tensor:
        return x if isinstance(x, Tensor) else Tensor(x)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    # -- backward -------------------------------------------------------------

    def backward(self) -> None:
        """Back-propagate from this scalar, accumulating into every leaf's ``grad``."""
        if self.data.size != 1:
            raise ShapeError("backward() starts from a 1x1 scalar")
        GradTape.from_root(self).backward()

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other) -> Tensor:
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        return add(self, scale(Tensor.wrap(other), -1.0))

    def __rsub__(self, other) -> Tensor:
        return add(Tensor.wrap(other), scale(self, -1.0))

    def __mul__(self, other) -> Tensor:
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other) -> Tensor:
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)


class GradTape:
    """Operations reachable from a root scalar, in topological order."""

    def __init__(self, root: Tensor, order: list[Tensor]):
        self.root = root
        self.order = order

    @classmethod
    def from_root(cls, root: Tensor) -> GradTape:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        # iterative post-order; deep graphs would overflow the recursion limit
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
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(root, order)

    def backward(self) -> None:
        grads: dict[int, np.ndarray] = {id(self.root): np.ones_like(self.root.data)}
        for node in reversed(self.order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


# -- core operations ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = Tensor.wrap(a), Tensor.wrap(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = Tensor.wrap(a), Tensor.wrap(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor._from_op(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    return Tensor._from_op(a.data.T.copy(), (a,), lambda g: (g.T,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError("log of a non-positive value")
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def clamp_max(a: Tensor, hi: float) -> Tensor:
    """Elementwise min(a, hi); the gradient is blocked where clamped."""
    keep = a.data <= hi
    return Tensor._from_op(np.minimum(a.data, hi), (a,), lambda g: (g * keep,))


def sum_all(a: Tensor) -> Tensor:
    return Tensor._from_op(
        np.array([[a.data.sum()]]), (a,), lambda g: (np.full(a.shape, g[0, 0]),)
    )


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return Tensor._from_op(
        np.array([[a.data.mean()]]), (a,), lambda g: (np.full(a.shape, g[0, 0] / n),)
    )


def masked_sum(a: Tensor, mask) -> Tensor:
    """Sum of ``a * mask`` with ``mask`` held constant."""
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != a.shape:
        raise ShapeError(f"masked_sum: mask {m.shape} vs tensor {a.shape}")
    return Tensor._from_op(
        np.array([[(a.data * m).sum()]]), (a,), lambda g: (g[0, 0] * m,)
    )


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    rows = {t.rows for t in tensors}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {sorted(rows)}")
    widths = [t.cols for t in tensors]
    bounds = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), backward)


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope)
    return Tensor._from_op(a.data * factor, (a,), lambda g: (g * factor,))


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    neg = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0, a.data, neg)
    deriv = np.where(a.data > 0, 1.0, neg + alpha)
    return Tensor._from_op(out, (a,), lambda g: (g * deriv,))


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate); identity when not training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return Tensor._from_op(a.data * keep, (a,), lambda g: (g * keep,))


def row_log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return Tensor._from_op(out, (x,), backward)


def masked_row_softmax(x: Tensor, mask) -> Tensor:
    """Row softmax restricted to entries where ``mask`` is nonzero; others are 0.

    Every row of ``mask`` must have at least one nonzero entry.
    """
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.shape:
        raise ShapeError(f"masked_row_softmax: mask {m.shape} vs tensor {x.shape}")
    if not m.any(axis=1).all():
        raise ValueError("masked_row_softmax: a row has no admissible entries")
    masked = np.where(m, x.data, -np.inf)
    shifted = masked - masked.max(axis=1, keepdims=True)
    e = np.where(m, np.exp(shifted), 0.0)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward)


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row by max(||row||, eps)."""
    norms = np.sqrt((x.data**2).sum(axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    out = x.data / denom
    active = norms > eps

    def backward(g):
        # rows below eps were divided by a constant
        proj = (g * out).sum(axis=1, keepdims=True)
        return (np.where(active, (g - out * proj) / denom, g / denom),)

    return Tensor._from_op(out, (x,), backward)


def take_rows(a: Tensor, idx) -> Tensor:
    """Rows of ``a`` selected by integer ``idx`` (repeats allowed)."""
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._from_op(a.data[idx], (a,), backward)


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise inner products as an m×1 column."""
    if a.shape != b.shape:
        raise ShapeError(f"row_dot: shapes differ {a.shape} vs {b.shape}")
    out = (a.data * b.data).sum(axis=1, keepdims=True)
    return Tensor._from_op(out, (a, b), lambda g: (g * b.data, g * a.data))


# -- gradient checking ------------------------------------------------------------


GRAD_CHECK_FLOOR = 1e-6


def grad_check(
    f: Callable[[Tensor], Tensor], x, step: float = 1e-5, floor: float = GRAD_CHECK_FLOOR
) -> float:
    """Max relative error between tape gradients of ``f`` at ``x`` and central differences.

    The relative error of each entry uses max(|analytic|, |numeric|, floor) as the
    denominator. The floor sits above central-difference roundoff (about
    1e-11 for unit-scale outputs) so exactly-zero gradients do not register
    as large relative errors.
    """
    base = np.array(Tensor.wrap(x).data, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    f(leaf).backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    for idx in np.ndindex(*base.shape):
        plus = base.copy()
        plus[idx] += step
        minus = base.copy()
        minus[idx] -= step
        numeric[idx] = (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check_params(
    loss_fn: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-5, floor: float = GRAD_CHECK_FLOOR
) -> float:
    """Like ``grad_check`` but perturbs the data of existing leaf tensors in place."""
    params = list(params)
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = np.zeros_like(p.data)
        for idx in np.ndindex(*p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + step
            up = loss_fn().item()
            p.data[idx] = orig - step
            down = loss_fn().item()
            p.data[idx] = orig
            numeric[idx] = (up - down) / (2 * step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
        p.zero_grad()
    return worst


# -- tensor files -----------------------------------------------------------------


def write_tensor(path: str | Path, data) -> None:
    """Write ``SLIPT1`` + little-endian int64 rows, cols + row-major float64 values."""
    arr = np.ascontiguousarray(Tensor.wrap(data).data, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<qq", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:6] != MAGIC:
        raise ValueError(f"{path}: missing SLIPT1 header")
    rows, cols = struct.unpack("<qq", raw[6:22])
    body = raw[22:]
    if len(body) != rows * cols * 8:
        raise ValueError(f"{path}: expected {rows}x{cols} floats, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)
