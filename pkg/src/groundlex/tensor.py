"""Dense float64 tensors with reverse-mode automatic differentiation.

Micrograd-style: every operation that touches a tracked tensor records its
parents and a backward closure on the output; ``backward()`` on a scalar
walks the recorded graph in reverse topological order. The graph is rebuilt
on every forward pass, so releasing the loss tensor resets the tape.

No higher-order gradients, no views: every op materialises its output.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import NumericsError, ShapeError

# Module switches. NaN checks cost one pass over each op output; they stay on
# by default because desk-scale runs are small.
_grad_enabled = True
_nan_checks = True

# Counts L2-normalisations that hit an exact zero vector (degenerate
# embeddings are returned as zero vectors rather than raising).
zero_norm_warnings = 0


def reset_zero_norm_warnings() -> int:
    global zero_norm_warnings
    n, zero_norm_warnings = zero_norm_warnings, 0
    return n


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def set_nan_checks(enabled: bool) -> None:
    global _nan_checks
    _nan_checks = enabled


def _check_finite(data: np.ndarray, op: str) -> None:
    if _nan_checks and not np.all(np.isfinite(data)):
        raise NumericsError(op)


class Tensor:
    """A float64 array plus an optional gradient buffer.

    Leaves created with ``requires_grad=True`` get a zero-initialised ``grad``
    so unused leaves report zero gradients after any backward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def backward(self) -> None:
        """Reverse-mode pass from a scalar; accumulates into leaf ``grad``s."""
        if self.data.size != 1:
            raise ShapeError("backward", self.shape)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad.fill(0.0)
        self.grad += 1.0
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all routed through module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor],
          backward: Callable[[Tensor], Callable[[], None]]) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None  # intermediates allocate lazily during backward
        out._parents = tuple(parents)
        out._backward = backward(out)
    return out


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def bw(out):
        def run():
            if a.requires_grad:
                _accum(a, _unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(out.grad, b.shape))
        return run

    return _make(data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None

    def bw(out):
        def run():
            if a.requires_grad:
                _accum(a, _unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-out.grad, b.shape))
        return run

    return _make(data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None

    def bw(out):
        def run():
            if a.requires_grad:
                _accum(a, _unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(out.grad * a.data, b.shape))
        return run

    return _make(data, "mul", (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    data = a.data @ b.data

    def bw(out):
        def run():
            g = out.grad
            if a.requires_grad:
                _accum(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))
        return run

    return _make(data, "matmul", (a, b), bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def bw(out):
        def run():
            if a.requires_grad:
                _accum(a, out.grad.reshape(a.shape))
        return run

    return _make(data, "reshape", (a,), bw)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    data = np.ascontiguousarray(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def bw(out):
        def run():
            if a.requires_grad:
                _accum(a, out.grad.transpose(inverse))
        return run

    return _make(data, "transpose", (a,), bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(out):
        def run():
            if not a.requires_grad:
                return
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.shape).copy())
        return run

    return _make(np.asarray(data), "sum", (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def bw(out):
        def run():
            if not a.requires_grad:
                return
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.shape) / count)
        return run

    return _make(np.asarray(data), "mean", (a,), bw)


# ---------------------------------------------------------------------------
# lookup / gather ops
# ---------------------------------------------------------------------------

def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ids of any integer shape -> ids.shape + (D,)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("embedding", table.shape, ids.shape)
    data = table.data[ids]

    def bw(out):
        def run():
            if table.requires_grad:
                buf = np.zeros_like(table.data)
                np.add.at(buf, ids.reshape(-1), out.grad.reshape(-1, table.shape[1]))
                _accum(table, buf)
        return run

    return _make(data, "embedding", (table,), bw)


def take_per_row(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one position per batch row: a (N,T,D), idx (N,) -> (N,D)."""
    idx = np.asarray(idx)
    n = a.shape[0]
    rows = np.arange(n)
    data = a.data[rows, idx]

    def bw(out):
        def run():
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                buf[rows, idx] = out.grad
                _accum(a, buf)
        return run

    return _make(data, "take_per_row", (a,), bw)


def take_along_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one entry along the final axis: a (...,V), idx (...) -> (...)."""
    idx = np.asarray(idx)
    data = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def bw(out):
        def run():
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                np.put_along_axis(buf, idx[..., None], out.grad[..., None], axis=-1)
                _accum(a, buf)
        return run

    return _make(data, "take_along_last", (a,), bw)


def diag_part(a: Tensor) -> Tensor:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("diag_part", a.shape)
    n = a.shape[0]
    rows = np.arange(n)
    data = a.data[rows, rows].copy()

    def bw(out):
        def run():
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                buf[rows, rows] = out.grad
                _accum(a, buf)
        return run

    return _make(data, "diag_part", (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities and normalisation
# ---------------------------------------------------------------------------

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    data = a.data * cdf

    def bw(out):
        def run():
            if a.requires_grad:
                pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
                _accum(a, out.grad * (cdf + a.data * pdf))
        return run

    return _make(data, "gelu", (a,), bw)


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Stable softmax; `mask` (boolean, broadcastable) marks allowed entries.

    Masked entries get exactly zero probability without any infinities.
    """
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise NumericsError("softmax", "fully masked row")
        m = np.where(mask, x, -np.inf).max(axis=axis, keepdims=True)
        e = np.exp(np.where(mask, x - m, 0.0)) * mask
    else:
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(out):
        def run():
            if a.requires_grad:
                g = out.grad
                _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))
        return run

    return _make(y, "softmax", (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    z = x - m
    data = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(out):
        def run():
            if a.requires_grad:
                g = out.grad
                _accum(a, g - np.exp(data) * g.sum(axis=axis, keepdims=True))
        return run

    return _make(data, "log_softmax", (a,), bw)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis, then apply the affine (gamma, beta)."""
    if gamma.shape != (a.shape[-1],) or beta.shape != (a.shape[-1],):
        raise ShapeError("layer_norm", a.shape, gamma.shape, beta.shape)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    data = xhat * gamma.data + beta.data

    def bw(out):
        def run():
            g = out.grad
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).reshape(-1, a.shape[-1]).sum(axis=0))
            if beta.requires_grad:
                _accum(beta, g.reshape(-1, a.shape[-1]).sum(axis=0))
            if a.requires_grad:
                gx = g * gamma.data
                m1 = gx.mean(axis=-1, keepdims=True)
                m2 = (gx * xhat).mean(axis=-1, keepdims=True)
                _accum(a, inv * (gx - m1 - xhat * m2))
        return run

    return _make(data, "layer_norm", (a, gamma, beta), bw)


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    """Scale to unit L2 norm along `axis`; exact zero vectors pass through
    unchanged and bump the module warning counter."""
    global zero_norm_warnings
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    zero = norm == 0.0
    if zero.any():
        zero_norm_warnings += int(zero.sum())
    safe = np.where(zero, 1.0, norm)
    y = a.data / safe

    def bw(out):
        def run():
            if a.requires_grad:
                g = out.grad
                gx = (g - y * (g * y).sum(axis=axis, keepdims=True)) / safe
                if zero.any():
                    gx = np.where(zero, 0.0, gx)
                _accum(a, gx)
        return run

    return _make(y, "l2_normalize", (a,), bw)


def dropout(a: Tensor, keep_prob: float, rng: np.random.Generator,
            train: bool = True) -> Tensor:
    """Inverted dropout: scales by 1/keep at train time, identity otherwise."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"dropout keep_prob must be in (0, 1], got {keep_prob}")
    if not train or keep_prob == 1.0:
        return a
    if rng is None:
        raise ValueError("dropout needs an explicit RNG at train time")
    mask = (rng.random(a.shape) < keep_prob) / keep_prob
    return mul(a, Tensor(mask))


def scaled_dot(q: Tensor, k: Tensor, scale: float) -> Tensor:
    """q @ k^T on the last two axes, multiplied by `scale`."""
    return mul(matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))),
               scale)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Sequence[Tensor]], Tensor], tensors: Iterable[Tensor],
               epsilon: float = 1e-5) -> float:
    """Max relative error between backward() gradients and central differences.

    Relative error per coordinate: |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    """
    tensors = list(tensors)
    for t in tensors:
        t.zero_grad()
    loss = f(tensors)
    if loss.size != 1:
        raise ShapeError("grad_check", loss.shape)
    loss.backward()
    ad_grads = [t.grad.copy() for t in tensors]

    worst = 0.0
    with no_grad():
        for t, g_ad in zip(tensors, ad_grads):
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                up = f(tensors).item()
                flat[i] = orig - epsilon
                down = f(tensors).item()
                flat[i] = orig
                g_fd = (up - down) / (2.0 * epsilon)
                g = g_ad.reshape(-1)[i]
                if not (math.isfinite(g_fd) and math.isfinite(g)):
                    raise NumericsError("grad_check")
                err = abs(g - g_fd) / max(1.0, abs(g), abs(g_fd))
                if err > worst:
                    worst = err
    return worst
