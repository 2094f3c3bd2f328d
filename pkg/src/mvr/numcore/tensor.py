"""Float64 tensors with a dynamically built reverse-mode tape.

Every operation returns a new ``Tensor`` holding the forward value and, when
any input requires gradients, a closure that routes the output gradient back
to its parents. ``Tensor.backward`` walks the tape in reverse topological
order. Shapes are plain numpy shapes; data is always float64 and row-major.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

NORM_EPS = 1e-12
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DegenerateVectorError(ValueError):
    """A vector whose norm is required to be positive is (near) zero."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        # Only keep the tape alive where gradients can actually flow.
        self._parents = tuple(p for p in parents if p.requires_grad)
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of a scalar output into every reachable leaf."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; use mul with a reciprocal")
        return mul(self, constant(1.0 / float(other)))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` along axes numpy broadcast over."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return Tensor(-a.data, parents=(a,), backward=backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return Tensor(out_data, parents=(a,), backward=backward)


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return Tensor(out_data, parents=(a,), backward=backward)


def gelu(a: Tensor) -> Tensor:
    """Elementwise x * Phi(x) with the exact erf-based normal CDF."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out_data = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        _accumulate(a, g * (cdf + x * pdf))

    return Tensor(out_data, parents=(a,), backward=backward)


# -- reductions / shape --------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return Tensor(out_data, parents=(a,), backward=backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), constant(1.0 / n))


def reshape(a: Tensor, shape) -> Tensor:
    old_shape = a.data.shape

    def backward(g):
        _accumulate(a, g.reshape(old_shape))

    return Tensor(a.data.reshape(shape), parents=(a,), backward=backward)


def transpose_last(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g.swapaxes(-1, -2))

    return Tensor(a.data.swapaxes(-1, -2), parents=(a,), backward=backward)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = list(tensors)
    sizes = [t.data.shape[axis] for t in ts]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return Tensor(out_data, parents=tuple(ts), backward=backward)


def stop_grad(a: Tensor) -> Tensor:
    """Detach from the tape; shares the forward value."""
    return Tensor(a.data)


# -- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError("matmul requires operands with ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} vs {b.data.shape}"
        )
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.data.shape))
        _accumulate(b, _unbroadcast(gb, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def gather_rows(table: Tensor, idx) -> Tensor:
    """Rows of a 2-D table selected by an integer index array.

    Output shape is ``idx.shape + (table.shape[1],)``; the backward pass
    scatter-adds into the table (duplicate indices accumulate).
    """
    if table.data.ndim != 2:
        raise DimensionError("gather_rows expects a 2-D table")
    idx = np.asarray(idx, dtype=np.int64)
    out_data = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
        _accumulate(table, gt)

    return Tensor(out_data, parents=(table,), backward=backward)


def select_rows(a: Tensor, idx) -> Tensor:
    """Per-example row selection: ``a[i, idx[i], :]`` for a [B, K, d] tensor."""
    if a.data.ndim != 3:
        raise DimensionError("select_rows expects a [B, K, d] tensor")
    idx = np.asarray(idx, dtype=np.int64)
    batch = np.arange(a.data.shape[0])
    out_data = a.data[batch, idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[batch, idx] = g
        _accumulate(a, ga)

    return Tensor(out_data, parents=(a,), backward=backward)


# -- normalizations -------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis``; outputs sum to one along that axis."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(a, out_data * (g - dot))

    return Tensor(out_data, parents=(a,), backward=backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    soft = np.exp(out_data)

    def backward(g):
        _accumulate(a, g - soft * g.sum(axis=axis, keepdims=True))

    return Tensor(out_data, parents=(a,), backward=backward)


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    """Scale vectors along ``axis`` to unit L2 norm.

    Raises DegenerateVectorError when any norm is at or below ``NORM_EPS``.
    """
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    if np.any(norm <= NORM_EPS):
        raise DegenerateVectorError("cannot normalize a (near-)zero vector")
    out_data = a.data / norm

    def backward(g):
        dot = (g * a.data).sum(axis=axis, keepdims=True)
        _accumulate(a, g / norm - a.data * (dot / norm**3))

    return Tensor(out_data, parents=(a,), backward=backward)


def squash(a: Tensor, axis: int = -1) -> Tensor:
    """Norm-compressing nonlinearity: v -> v * |v| / (1 + |v|^2).

    Keeps direction, maps norm n to n^2/(1+n^2) (always < 1), and is defined
    as zero at the zero vector.
    """
    sq = (a.data * a.data).sum(axis=axis, keepdims=True)
    norm = np.sqrt(sq)
    scale = norm / (1.0 + sq)
    out_data = a.data * scale

    def backward(g):
        # d scale / d norm, divided by norm for the outer-product term; the
        # zero-vector limit of the whole Jacobian is zero.
        dscale = (1.0 - sq) / (1.0 + sq) ** 2
        coef = np.where(norm > 1e-300, dscale / np.where(norm > 1e-300, norm, 1.0), 0.0)
        dot = (g * a.data).sum(axis=axis, keepdims=True)
        _accumulate(a, g * scale + a.data * (coef * dot))

    return Tensor(out_data, parents=(a,), backward=backward)
