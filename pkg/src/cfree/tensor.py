"""Minimal reverse-mode autodiff over dense numpy arrays.

Just enough engine for the molecular encoders and the pretraining loop:
broadcasted elementwise math, batched matmul, reductions, gathers and
segment sums, multi-head softmax attention, dropout with an explicit RNG
stream, and a central finite-difference gradient checker.

A Tensor wraps one numpy array. Ops record (parent, vjp) pairs on the
output; ``backward`` replays the tape in reverse construction order and
visits each reachable node exactly once. Only trailing-dim (numpy-style)
broadcasting is supported; anything else must be reshaped explicitly.
Float64 is the default dtype so gradchecks are meaningful; training may
switch to float32 via ``set_default_dtype``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf as _erf

__all__ = [
    "Tensor", "ShapeError", "set_default_dtype", "default_dtype", "tensor",
    "zeros", "ones", "randn", "add", "sub", "mul", "div", "neg", "matmul",
    "relu", "silu", "softplus", "exp", "log", "sqrt", "absolute", "gelu",
    "sigmoid", "reduce_sum", "reduce_mean", "reduce_max", "reshape",
    "transpose", "concat", "take", "segment_sum", "index", "stop_gradient",
    "softmax", "softmax_attention", "dropout", "linear", "layer_norm",
    "gradcheck", "GradReport",
]

_DEFAULT_DTYPE = np.float64
_FLOATS = (np.float32, np.float64)
_COUNTER = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in _FLOATS:
        raise ValueError(f"default dtype must be float32 or float64, got {dtype}")
    _DEFAULT_DTYPE = dtype


def default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """Dense array plus optional gradient tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_tid")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            raise TypeError("wrap numpy data, not another Tensor")
        arr = np.asarray(data)
        if arr.dtype.type not in _FLOATS:
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._tid = next(_COUNTER)

    # ---- introspection ----

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    # ---- autodiff ----

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad: np.ndarray | None = None) -> int:
        """Propagate gradients to all reachable leaves.

        Returns the number of nodes visited; each reachable node is
        processed exactly once, in reverse construction order.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != output shape {self.shape}")
        if not self.requires_grad:
            return 0
        # construction order is a topological order: parents predate children
        seen = {self._tid: self}
        stack = [self]
        while stack:
            node = stack.pop()
            for parent, _ in node._parents:
                if parent.requires_grad and parent._tid not in seen:
                    seen[parent._tid] = parent
                    stack.append(parent)
        pending: dict[int, np.ndarray] = {self._tid: grad}
        visits = 0
        for tid in sorted(seen, reverse=True):
            node = seen[tid]
            g = pending.pop(tid, None)
            if g is None:
                continue
            visits += 1
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, vjp in node._parents:
                if not parent.requires_grad:
                    continue
                pg = vjp(g)
                if parent._tid in pending:
                    pending[parent._tid] = pending[parent._tid] + pg
                else:
                    pending[parent._tid] = pg
        return visits

    # ---- operator sugar ----

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def randn(rng: np.random.Generator, shape, std: float = 1.0,
          requires_grad: bool = False) -> Tensor:
    data = rng.standard_normal(shape) * std
    return Tensor(data.astype(_DEFAULT_DTYPE), requires_grad=requires_grad)


# ---- wiring helpers ----

def _ensure(x, like: np.dtype | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    target = like if like is not None else _DEFAULT_DTYPE
    if arr.dtype != target:
        arr = arr.astype(target)
    return Tensor(arr)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce raw operands, giving them the Tensor sibling's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, _ensure(b, a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return _ensure(a, b.dtype), b
    return _ensure(a), _ensure(b)


def _make(data: np.ndarray, parents) -> Tensor:
    kept = tuple((p, fn) for p, fn in parents if p.requires_grad)
    out = Tensor(data, requires_grad=bool(kept))
    out._parents = kept
    return out


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---- elementwise binary ----

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b)
    out = a.data + b.data
    return _make(out, [(a, lambda g: _unbroadcast(g, a.shape)),
                       (b, lambda g: _unbroadcast(g, b.shape))])


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b)
    out = a.data - b.data
    return _make(out, [(a, lambda g: _unbroadcast(g, a.shape)),
                       (b, lambda g: _unbroadcast(-g, b.shape))])


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b)
    out = a.data * b.data
    return _make(out, [(a, lambda g: _unbroadcast(g * b.data, a.shape)),
                       (b, lambda g: _unbroadcast(g * a.data, b.shape))])


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b)
    out = a.data / b.data
    return _make(out, [(a, lambda g: _unbroadcast(g / b.data, a.shape)),
                       (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape))])


def neg(a) -> Tensor:
    a = _ensure(a)
    return _make(-a.data, [(a, lambda g: -g)])


# ---- matmul ----

def matmul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def grad_a(g):
        return _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)

    def grad_b(g):
        return _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)

    return _make(out, [(a, grad_a), (b, grad_b)])


# ---- elementwise unary ----

def relu(a) -> Tensor:
    a = _ensure(a)
    out = np.maximum(a.data, 0)
    return _make(out, [(a, lambda g: g * (a.data > 0))])


def sigmoid(a) -> Tensor:
    a = _ensure(a)
    out = _np_sigmoid(a.data)
    return _make(out, [(a, lambda g: g * out * (1 - out))])


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp only on the safe side to avoid overflow warnings
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a) -> Tensor:
    a = _ensure(a)
    s = _np_sigmoid(a.data)
    out = a.data * s
    return _make(out, [(a, lambda g: g * (s * (1 + a.data * (1 - s))))])


def softplus(a) -> Tensor:
    a = _ensure(a)
    out = np.logaddexp(0.0, a.data)
    return _make(out, [(a, lambda g: g * _np_sigmoid(a.data))])


def exp(a) -> Tensor:
    a = _ensure(a)
    out = np.exp(a.data)
    return _make(out, [(a, lambda g: g * out)])


def log(a) -> Tensor:
    a = _ensure(a)
    out = np.log(a.data)
    return _make(out, [(a, lambda g: g / a.data)])


def sqrt(a) -> Tensor:
    a = _ensure(a)
    out = np.sqrt(a.data)
    return _make(out, [(a, lambda g: g * 0.5 / out)])


def absolute(a) -> Tensor:
    a = _ensure(a)
    out = np.abs(a.data)
    return _make(out, [(a, lambda g: g * np.sign(a.data))])


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = _ensure(a)
    x = a.data
    phi = 0.5 * (1.0 + _erf(x / math.sqrt(2.0)))
    out = x * phi

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        return g * (phi + x * pdf)

    return _make(out, [(a, vjp)])


# ---- reductions ----

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = axis if isinstance(axis, tuple) else (axis,)
    normed = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for ndim {ndim}")
        normed.append(ax % ndim)
    if len(set(normed)) != len(normed):
        raise ShapeError(f"duplicate axes in {axis}")
    return tuple(sorted(normed))


def _spread(g: np.ndarray, shape: tuple[int, ...], axes: tuple[int, ...],
            keepdims: bool) -> np.ndarray:
    if not keepdims:
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _ensure(a)
    axes = _norm_axes(axis, a.data.ndim)
    out = a.data.sum(axis=axes or None, keepdims=keepdims)
    return _make(np.asarray(out),
                 [(a, lambda g: _spread(g, a.shape, axes, keepdims).copy())])


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _ensure(a)
    axes = _norm_axes(axis, a.data.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes or None, keepdims=keepdims)
    return _make(np.asarray(out),
                 [(a, lambda g: _spread(g, a.shape, axes, keepdims) / count)])


def reduce_max(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; ties route the gradient to the lowest flat index."""
    a = _ensure(a)
    x = a.data
    if axis is None:
        flat_idx = int(np.argmax(x))
        out = x.reshape(-1)[flat_idx]
        if keepdims:
            out = np.full((1,) * x.ndim, out, dtype=x.dtype)

        def vjp_all(g):
            z = np.zeros_like(x)
            z.reshape(-1)[flat_idx] = np.asarray(g).reshape(-1)[0]
            return z

        return _make(np.asarray(out), [(a, vjp_all)])
    if isinstance(axis, tuple):
        raise ShapeError("max supports a single axis or None")
    (ax,) = _norm_axes(axis, x.ndim)
    idx = np.argmax(x, axis=ax)  # first occurrence wins ties
    out = np.take_along_axis(x, np.expand_dims(idx, ax), ax)
    if not keepdims:
        out = out.squeeze(ax)

    def vjp(g):
        z = np.zeros_like(x)
        gg = np.asarray(g)
        if not keepdims:
            gg = np.expand_dims(gg, ax)
        np.put_along_axis(z, np.expand_dims(idx, ax), gg, ax)
        return z

    return _make(out, [(a, vjp)])


# ---- shape surgery ----

def reshape(a, shape) -> Tensor:
    a = _ensure(a)
    out = a.data.reshape(shape)
    return _make(out, [(a, lambda g: g.reshape(a.shape))])


def transpose(a, axes=None) -> Tensor:
    a = _ensure(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)
    return _make(out, [(a, lambda g: g.transpose(inv))])


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_ensure(p) for p in parts]
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.shape[axis] for p in parts])

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        return vjp

    return _make(out, [(p, make_vjp(i)) for i, p in enumerate(parts)])


def index(a, key) -> Tensor:
    """Basic (int/slice) indexing with gradient."""
    a = _ensure(a)
    out = a.data[key]

    def vjp(g):
        z = np.zeros_like(a.data)
        z[key] = g
        return z

    return _make(np.array(out, copy=True), [(a, vjp)])


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather rows along an axis; duplicate indices accumulate in backward."""
    a = _ensure(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise ShapeError(f"take indices out of range for axis {axis} of {a.shape}")
    out = np.take(a.data, idx, axis=axis)

    def vjp(g):
        z = np.zeros_like(a.data)
        if axis == 0:
            np.add.at(z, idx, g)
        else:
            zm = np.moveaxis(z, axis, 0)
            np.add.at(zm, idx, np.moveaxis(g, axis, 0))
        return z

    return _make(out, [(a, vjp)])


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets along axis 0."""
    a = _ensure(a)
    ids = np.asarray(segment_ids, dtype=np.intp)
    if ids.ndim != 1 or ids.shape[0] != a.shape[0]:
        raise ShapeError(f"segment ids {ids.shape} do not match leading dim of {a.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise ShapeError("segment id out of range")
    out = np.zeros((num_segments,) + a.shape[1:], dtype=a.dtype)
    np.add.at(out, ids, a.data)
    return _make(out, [(a, lambda g: g[ids])])


def stop_gradient(a) -> Tensor:
    """Detach from the tape; no gradient flows past this point."""
    return _ensure(a).detach()


# ---- softmax / attention / dropout ----

def softmax(a) -> Tensor:
    """Softmax over the last axis (max-shifted for stability)."""
    a = _ensure(a)
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (g - (g * s).sum(axis=-1, keepdims=True)) * s

    return _make(s, [(a, vjp)])


def softmax_attention(q, k, v, heads: int) -> Tensor:
    """Scaled dot-product attention over already-projected Q, K, V.

    Q is (Lq, d), K and V are (Lk, d); d splits evenly into ``heads``.
    Heads attend independently and are concatenated back to (Lq, d).
    """
    q, k, v = _ensure(q), _ensure(k), _ensure(v)
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("attention operands must be 2-D (L, d)")
    L, d = q.shape
    if d % heads != 0:
        raise ShapeError(f"model dim {d} not divisible by {heads} heads")
    if k.shape[1] != d or v.shape != k.shape:
        raise ShapeError(f"attention shapes disagree: q {q.shape} k {k.shape} v {v.shape}")
    dh = d // heads
    qh = transpose(reshape(q, (L, heads, dh)), (1, 0, 2))
    kh = transpose(reshape(k, (k.shape[0], heads, dh)), (1, 0, 2))
    vh = transpose(reshape(v, (v.shape[0], heads, dh)), (1, 0, 2))
    scores = mul(matmul(qh, transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(dh))
    weights = softmax(scores)
    out = matmul(weights, vh)
    return reshape(transpose(out, (1, 0, 2)), (L, d))


def dropout(a, p: float, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout from an explicit RNG stream; p=0 is the identity."""
    a = _ensure(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout with p > 0 needs an explicit rng")
    mask = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    return _make(a.data * mask, [(a, lambda g: g * mask)])


# ---- composite conveniences ----

def linear(x, w, b=None) -> Tensor:
    out = matmul(x, w)
    return add(out, b) if b is not None else out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x = _ensure(x)
    mu = reduce_mean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = reduce_mean(mul(xc, xc), axis=-1, keepdims=True)
    normed = div(xc, sqrt(add(var, eps)))
    return add(mul(normed, gain), bias)


# ---- gradient checking ----

@dataclass
class GradReport:
    """Per-parameter comparison of analytic vs central-difference grads."""

    eps: float
    per_param: dict = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max((v["max_rel_err"] for v in self.per_param.values()), default=0.0)

    def ok(self, tol: float = 1e-4) -> bool:
        return all(np.isfinite(v["max_rel_err"]) for v in self.per_param.values()) \
            and self.max_rel_err < tol

    def summary(self) -> str:
        lines = [f"gradcheck eps={self.eps:g} max_rel_err={self.max_rel_err:.3e}"]
        for name, v in sorted(self.per_param.items()):
            lines.append(f"  {name}: max_rel_err={v['max_rel_err']:.3e} "
                         f"(checked {v['checked']}/{v['size']})")
        return "\n".join(lines)


def _sample_indices(size: int, max_entries: int | None) -> np.ndarray:
    if max_entries is None or size <= max_entries:
        return np.arange(size)
    # deterministic, evenly spaced coverage of the flat index range
    return np.unique(np.linspace(0, size - 1, max_entries).astype(np.intp))


def gradcheck(f, params: dict[str, Tensor], eps: float = 1e-5,
              max_entries: int | None = None) -> GradReport:
    """Compare analytic gradients of scalar ``f()`` with central differences.

    ``f`` must rebuild its graph from ``params`` on every call and be
    deterministic. Relative error uses max(1, |analytic|, |numeric|) as
    the denominator. Parameters must be float64.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ValueError(f"gradcheck requires float64 params, {name} is {p.dtype}")
        if not p.requires_grad:
            raise ValueError(f"param {name} does not require grad")
        p.zero_grad()
    out = f()
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ShapeError("gradcheck target must return a scalar Tensor")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("gradcheck objective is not finite")
    out.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}
    report = GradReport(eps=eps)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        worst = 0.0
        worst_idx = -1
        idxs = _sample_indices(flat.size, max_entries)
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + eps
            hi = f().item()
            flat[i] = keep - eps
            lo = f().item()
            flat[i] = keep
            num = (hi - lo) / (2.0 * eps)
            rel = abs(ana[i] - num) / max(1.0, abs(ana[i]), abs(num))
            if not np.isfinite(num):
                rel = float("inf")
            if rel > worst:
                worst, worst_idx = rel, int(i)
        report.per_param[name] = {
            "max_rel_err": worst,
            "at": worst_idx,
            "checked": int(idxs.size),
            "size": int(flat.size),
        }
    return report
