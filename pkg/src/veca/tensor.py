"""Dense tensors with reverse-mode automatic differentiation.

The substrate for everything else in the package: a row-major float32/float64
array type and a small set of primitive ops that record a tape. Ops that sit
inside every transformer block (linear, layer norm, softmax) are single tape
nodes with hand-written backwards; everything else composes. Design
constraints, all deliberate:

* every op validates that its output is finite and raises
  :class:`~veca.errors.NonFiniteError` otherwise;
* binary elementwise ops require exactly matching shapes, a python scalar, or
  an explicit :func:`broadcast_to` beforehand (no silent broadcasting);
* the backward pass visits nodes in reverse creation order, which is a
  topological order of the recorded graph, and always accumulates (sums)
  gradients into parents;
* tensors are treated as immutable once created; only optimizers mutate
  ``.data`` in place, outside any recorded graph.

Forward evaluation of disjoint graphs is safe to run concurrently; a single
graph's backward pass is single-writer.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DTypeError, NonFiniteError, ShapeError

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_counter = itertools.count()


def _check_finite(data: np.ndarray, op: str) -> None:
    # fast path: a single reduction; only a suspicious sum pays for the full scan
    with np.errstate(invalid="ignore", over="ignore"):
        if np.isfinite(data.sum()):
            return
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced a non-finite value")


class Tensor:
    """N-dimensional float array with optional gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_order")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in SUPPORTED_DTYPES:
            if dtype is None and arr.dtype.kind in "iub":
                arr = arr.astype(np.float64)
            else:
                raise DTypeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], None] | None = None
        self._order = next(_counter)

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._bad_item()

    def _bad_item(self):
        raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:  # pragma: no cover
        grad = ", grad" if self.grad is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"

    # -- autograd ------------------------------------------------------------

    def backward(self) -> None:
        """Seed d(self)/d(self)=1 and propagate to every reachable parent."""
        if self.size != 1:
            raise ShapeError(f"backward() requires a scalar output, got shape {self.shape}")
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[Tensor] = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda t: t._order, reverse=True)
        self.grad = np.ones_like(self.data)
        for node in nodes:
            if node._grad_fn is not None and node.grad is not None:
                node._grad_fn(node.grad)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def _coerce(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _from_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    grad_fn: Callable[[np.ndarray], None],
    op: str,
    check: bool = True,
) -> Tensor:
    # ops that merely rearrange already-validated values may skip the scan
    if check:
        _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    requires = False
    for p in parents:
        if p.requires_grad:
            requires = True
            break
    out.requires_grad = requires
    if requires:
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    else:
        out._parents = ()
        out._grad_fn = None
    out._order = next(_counter)
    return out


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise DTypeError(f"{op}: dtypes differ: {a.dtype} vs {b.dtype}")
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes differ: {a.shape} vs {b.shape}")


def _unbroadcast_scalar(t: Tensor, g: np.ndarray) -> np.ndarray:
    # the only implicit broadcast allowed is a single-element operand
    if t.size == 1 and g.size > 1:
        return np.sum(g).reshape(t.shape)
    return g


# -- primitive elementwise ops -------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = _coerce(b, a.dtype)
    _binary_shapes(a, b, "add")
    data = a.data + b.data

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast_scalar(a, g))
        _accumulate(b, _unbroadcast_scalar(b, g))

    return _from_op(data, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = _coerce(b, a.dtype)
    _binary_shapes(a, b, "sub")
    data = a.data - b.data

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast_scalar(a, g))
        _accumulate(b, _unbroadcast_scalar(b, -g))

    return _from_op(data, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = _coerce(b, a.dtype)
    _binary_shapes(a, b, "mul")
    data = a.data * b.data

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast_scalar(a, g * b.data))
        _accumulate(b, _unbroadcast_scalar(b, g * a.data))

    return _from_op(data, (a, b), grad_fn, "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a)
    b = _coerce(b, a.dtype)
    _binary_shapes(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast_scalar(a, g / b.data))
        _accumulate(b, _unbroadcast_scalar(b, -g * a.data / (b.data * b.data)))

    return _from_op(data, (a, b), grad_fn, "div")


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = -a.data

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, -g)

    return _from_op(data, (a,), grad_fn, "neg", check=False)


def power(a: Tensor, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    with np.errstate(over="ignore", invalid="ignore"):
        data = a.data**p

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _from_op(data, (a,), grad_fn, f"power({p})")


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, g * data)

    return _from_op(data, (a,), grad_fn, "exp")


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, g / a.data)

    return _from_op(data, (a,), grad_fn, "log")


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, g * (1.0 - data * data))

    return _from_op(data, (a,), grad_fn, "tanh")


def sin(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.sin(a.data)

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, g * np.cos(a.data))

    return _from_op(data, (a,), grad_fn, "sin")


def cos(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.cos(a.data)

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, -g * np.sin(a.data))

    return _from_op(data, (a,), grad_fn, "cos")


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x), with an overflow-free sigmoid."""
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    sig = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    data = x * sig

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, g * sig * (1.0 + x * (1.0 - sig)))

    return _from_op(data, (a,), grad_fn, "silu")


def clip_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient passes only where a > floor."""
    a = as_tensor(a)
    floor = float(floor)
    data = np.maximum(a.data, floor)

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, g * (a.data > floor))

    return _from_op(data, (a,), grad_fn, "clip_min")


# -- shape ops -----------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, g.reshape(a.shape))

    return _from_op(data, (a,), grad_fn, "reshape", check=False)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(sorted(range(len(axes)), key=axes.__getitem__))
    data = a.data.transpose(axes)

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, g.transpose(inverse))

    return _from_op(data, (a,), grad_fn, "transpose", check=False)


def getitem(a: Tensor, idx) -> Tensor:
    # basic indexing only: slices and integers (no repeated fancy indices)
    a = as_tensor(a)
    data = a.data[idx]

    def grad_fn(g: np.ndarray) -> None:
        buf = np.zeros_like(a.data)
        buf[idx] = g
        _accumulate(a, buf)

    return _from_op(data, (a,), grad_fn, "getitem", check=False)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of zero tensors")
    if any(t.dtype != ts[0].dtype for t in ts):
        raise DTypeError("concat: dtypes differ")
    data = np.concatenate([t.data for t in ts], axis=axis)
    offsets = [0]
    for t in ts:
        offsets.append(offsets[-1] + t.shape[axis])

    def grad_fn(g: np.ndarray) -> None:
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _from_op(data, ts, grad_fn, "concat", check=False)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-rules broadcast; backward sums over the expanded axes."""
    a = as_tensor(a)
    shape = tuple(shape)
    data = np.broadcast_to(a.data, shape).copy()

    def grad_fn(g: np.ndarray) -> None:
        extra = g.ndim - a.ndim
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        expanded = tuple(
            i for i, (da, dg) in enumerate(zip(a.shape, g.shape)) if da == 1 and dg != 1
        )
        if expanded:
            g = g.sum(axis=expanded, keepdims=True)
        _accumulate(a, g)

    return _from_op(data, (a,), grad_fn, "broadcast_to", check=False)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g: np.ndarray) -> None:
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
            return
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        if not keepdims:
            for ax in sorted(ax % a.ndim for ax in axes):
                g = np.expand_dims(g, ax)
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _from_op(data, (a,), grad_fn, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


# -- matmul ----------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes.

    Leading (batch) axes must match exactly; the only broadcast allowed is the
    matrix product itself. Backward: dA = dC @ B^T, dB = A^T @ dC.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.dtype != b.dtype:
        raise DTypeError(f"matmul: dtypes differ: {a.dtype} vs {b.dtype}")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must have rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        data = np.matmul(a.data, b.data)

    def swap(x: np.ndarray) -> np.ndarray:
        return np.swapaxes(x, -1, -2)

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, np.matmul(g, swap(b.data)))
        _accumulate(b, np.matmul(swap(a.data), g))

    return _from_op(data, (a, b), grad_fn, "matmul")


# -- fused neural-net primitives ----------------------------------------------
#
# These three appear in every block, so they are single tape nodes with
# hand-written backwards rather than compositions; each is covered by the
# finite-difference property suite like any other primitive.


def softmax_rows(x: Tensor) -> Tensor:
    """Row softmax over the last axis, stabilized by max subtraction.

    The subtracted row maximum acts as a constant shift, which is exact:
    softmax is invariant to per-row shifts, so the shift contributes zero
    gradient. Output rows sum to 1 for any finite input.
    """
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError(f"softmax_rows: need a non-empty last axis, got {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(x, p * (g - np.sum(g * p, axis=-1, keepdims=True)))

    return _from_op(p, (x,), grad_fn, "softmax_rows")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-row standardization over the last axis, then affine by gamma/beta.

    The gamma/beta broadcast over leading axes is the one sanctioned
    trailing-dimension affine.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ShapeError(f"layer_norm: eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma/beta must have shape ({d},), got {gamma.shape} and {beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = centered * inv
    out = xn * gamma.data + beta.data

    def grad_fn(g: np.ndarray) -> None:
        lead = tuple(range(g.ndim - 1))
        _accumulate(gamma, np.sum(g * xn, axis=lead))
        _accumulate(beta, np.sum(g, axis=lead))
        gxn = g * gamma.data
        dx = inv * (
            gxn
            - gxn.mean(axis=-1, keepdims=True)
            - xn * np.mean(gxn * xn, axis=-1, keepdims=True)
        )
        _accumulate(x, dx)

    return _from_op(out, (x, gamma, beta), grad_fn, "layer_norm")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b over the trailing axis). x: [..., in], w: [in, out], b: [out]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0] or w.ndim != 2:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    lead = x.shape[:-1]
    m = math.prod(lead) if lead else 1
    flat = x.data.reshape(m, x.shape[-1])
    with np.errstate(over="ignore", invalid="ignore"):
        out = flat @ w.data
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def grad_fn(g: np.ndarray) -> None:
        gf = g.reshape(m, w.shape[1])
        _accumulate(x, (gf @ w.data.T).reshape(x.shape))
        _accumulate(w, flat.T @ gf)
        if b is not None:
            _accumulate(b, gf.sum(axis=0))

    return _from_op(out.reshape(lead + (w.shape[1],)), parents, grad_fn, "linear")


def dropout(x: Tensor, p: float, stream) -> Tensor:
    """Inverted dropout with an explicit stream; identity when p == 0."""
    if p <= 0.0:
        return x
    x = as_tensor(x)
    keep = (stream.uniform(size=x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return mul(x, Tensor(keep))


# -- gradient checking --------------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], theta: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map a tensor to a scalar tensor. The analytic gradient comes
    from one recorded forward/backward; each coordinate is then perturbed by
    +-h for the finite-difference estimate. Error per coordinate is
    |analytic - numeric| / max(1, |analytic|). Requires float64.
    """
    theta = as_tensor(theta)
    if theta.dtype != np.float64:
        raise DTypeError("grad_check requires float64 parameters")
    base = Tensor(theta.data.copy(), requires_grad=True)
    out = f(base)
    if out.size != 1:
        raise ShapeError(f"grad_check: f must return a scalar, got shape {out.shape}")
    out.backward()
    analytic = (
        base.grad.copy() if base.grad is not None else np.zeros_like(base.data)
    )

    def probe(i: int, sign: float) -> float:
        bumped = theta.data.reshape(-1).copy()
        bumped[i] += sign * h
        try:
            val = f(Tensor(bumped.reshape(theta.shape)))
        except NonFiniteError as err:
            raise NonFiniteError(
                f"grad_check: f non-finite at coordinate {i} ({'+h' if sign > 0 else '-h'}): {err}"
            ) from err
        return float(val.data.reshape(-1)[0])

    numeric = np.zeros(theta.size, dtype=np.float64)
    for i in range(theta.size):
        numeric[i] = (probe(i, +1.0) - probe(i, -1.0)) / (2.0 * h)

    ana = analytic.reshape(-1)
    rel = np.abs(ana - numeric) / np.maximum(1.0, np.abs(ana))
    return float(rel.max()) if rel.size else 0.0
