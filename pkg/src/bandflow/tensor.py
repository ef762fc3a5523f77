"""Dense tensors with reverse-mode automatic differentiation.

Define-by-run: operations executed inside a ``with Tape():`` block record
their local gradient rules onto that tape; ``backward(loss)`` replays the
tape in reverse append order.  Outside a tape every op is forward-only.

Gradients are accumulated in ``Tensor.grad`` (same shape as the tensor,
allocated lazily, zeros for leaves that never participate).  Default dtype
is float64 so finite-difference checks are meaningful; float32 is allowed
for speed.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    BoundsError,
    ConfigError,
    DimensionError,
    NumericError,
    StateError,
)

__all__ = [
    "Tensor",
    "Tape",
    "ParameterStore",
    "tensor",
    "zeros",
    "ones",
    "randn",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "getitem",
    "concat",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "sigmoid",
    "silu",
    "softplus",
    "sum_",
    "mean",
    "softmax",
    "rmsnorm",
    "layernorm",
    "adaln",
    "conv1d",
    "cross_entropy",
    "mse",
    "gather",
    "embedding_lookup",
    "detach",
]

RMSNORM_EPS = 1e-6
LAYERNORM_EPS = 1e-5


class Tensor:
    """A dense n-dimensional array that can carry a gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else np.float64)
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _scalar_err(self)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0
        elif self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_(self, p)

    def __getitem__(self, key):
        return getitem(self, key)


def _scalar_err(t):
    raise DimensionError(f"expected scalar tensor, got shape {t.shape}")


class _Node:
    __slots__ = ("out", "pairs")

    def __init__(self, out, pairs):
        self.out = out
        self.pairs = pairs


class Tape:
    """Append-only record of operations; replayed backwards exactly once."""

    def __init__(self):
        self.nodes = []
        self._used = False
        self._prev = None

    def __enter__(self):
        global _TAPE
        self._prev = _TAPE
        _TAPE = self
        return self

    def __exit__(self, *exc):
        global _TAPE
        _TAPE = self._prev
        return False

    def backward(self, loss):
        if self._used:
            raise StateError("backward already ran on this tape")
        if loss.size != 1:
            raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
        self._used = True
        loss.accumulate(np.ones_like(loss.data))
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            for inp, fn in node.pairs:
                if inp.requires_grad:
                    inp.accumulate(fn(g))


_TAPE = None


def active_tape():
    return _TAPE


def _make(out_data, pairs):
    """Wrap op output; record on the active tape when gradients are needed."""
    rg = _TAPE is not None and any(t.requires_grad for t, _ in pairs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = rg
    out.grad = None
    out.tape = None
    if rg:
        _TAPE.nodes.append(_Node(out, [(t, f) for t, f in pairs if t.requires_grad]))
        out.tape = _TAPE
    return out


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def backward(loss):
    """Run reverse-mode accumulation from a scalar loss."""
    if not isinstance(loss, Tensor) or loss.tape is None:
        raise StateError("loss is not attached to a tape; run it inside `with Tape():`")
    loss.tape.backward(loss)


# ---------------------------------------------------------------------------
# creation helpers

def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad=False, dtype=np.float64):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, requires_grad=False, dtype=np.float64):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def randn(rng, shape, scale=1.0, requires_grad=False, dtype=np.float64):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=requires_grad, dtype=dtype)


def detach(x):
    """Constant copy; blocks gradient flow (stop-gradient)."""
    x = _as_tensor(x)
    return Tensor(x.data.copy())


# ---------------------------------------------------------------------------
# broadcasting discipline: shapes must be equal, or one operand must
# broadcast against the other's trailing axes (scalars included); anything
# that would produce a brand-new shape is a DimensionError.

def _check_broadcast(a, b):
    try:
        out_shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}") from None
    if out_shape != a.shape and out_shape != b.shape:
        raise DimensionError(
            f"broadcast of {a.shape} and {b.shape} would create new shape {out_shape}"
        )
    return out_shape


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _check_broadcast(a, b)
    out = a.data + b.data
    return _make(out, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _check_broadcast(a, b)
    out = a.data - b.data
    return _make(out, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(-g, b.shape)),
    ])


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _check_broadcast(a, b)
    out = a.data * b.data
    return _make(out, [
        (a, lambda g: _unbroadcast(g * b.data, a.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.shape)),
    ])


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _check_broadcast(a, b)
    out = a.data / b.data
    return _make(out, [
        (a, lambda g: _unbroadcast(g / b.data, a.shape)),
        (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
    ])


def neg(a):
    a = _as_tensor(a)
    return _make(-a.data, [(a, lambda g: -g)])


def pow_(a, p):
    a = _as_tensor(a)
    p = float(p)
    out = a.data ** p
    return _make(out, [(a, lambda g: g * p * a.data ** (p - 1.0))])


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make(out, [(a, lambda g: g * out)])


def log(a):
    a = _as_tensor(a)
    out = np.log(a.data)
    return _make(out, [(a, lambda g: g / a.data)])


def sqrt(a):
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, [(a, lambda g: g * 0.5 / out)])


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, [(a, lambda g: g * (1.0 - out * out))])


def sigmoid(a):
    a = _as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, [(a, lambda g: g * out * (1.0 - out))])


def silu(a):
    a = _as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * s
    return _make(out, [(a, lambda g: g * (s + a.data * s * (1.0 - s)))])


def softplus(a):
    a = _as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    s = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, [(a, lambda g: g * s)])


# ---------------------------------------------------------------------------
# linear algebra / shape ops

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    out = a.data @ b.data
    return _make(out, [
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ])


def transpose(a):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got {a.shape}")
    return _make(a.data.T.copy(), [(a, lambda g: g.T)])


def reshape(a, shape):
    a = _as_tensor(a)
    out = a.data.reshape(shape).copy()
    return _make(out, [(a, lambda g: g.reshape(a.shape))])


def getitem(a, key):
    a = _as_tensor(a)
    out = a.data[key]
    out = np.array(out, copy=True)

    parts = key if isinstance(key, tuple) else (key,)
    fancy = any(isinstance(p, (np.ndarray, list)) for p in parts)

    def grad_fn(g):
        buf = np.zeros_like(a.data)
        if fancy:
            np.add.at(buf, key, g)
        else:
            buf[key] += g
        return buf

    return _make(out, [(a, grad_fn)])


def concat(parts, axis=0):
    parts = [_as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.shape[axis] for p in parts])

    def make_fn(i):
        lo, hi = offsets[i], offsets[i + 1]

        def fn(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        return fn

    return _make(out, [(p, make_fn(i)) for i, p in enumerate(parts)])


# ---------------------------------------------------------------------------
# reductions

def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out)

    def grad_fn(g):
        if axis is None:
            return np.full_like(a.data, float(g))
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.shape).copy()

    return _make(out, [(a, grad_fn)])


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# normalization and activation composites with bespoke gradients

def softmax(a, axis=-1):
    a = _as_tensor(a)
    if not np.isfinite(a.data).all():
        raise NumericError("softmax input contains non-finite values")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return _make(out, [(a, grad_fn)])


def rmsnorm(a, gain):
    a, gain = _as_tensor(a), _as_tensor(gain, like=a)
    if a.shape[-1] == 0:
        raise DimensionError("rmsnorm over zero-length axis")
    if gain.shape != a.shape[-1:]:
        raise DimensionError(f"gain shape {gain.shape} does not match last axis of {a.shape}")
    ms = mean(mul(a, a), axis=-1, keepdims=True)
    inv = pow_(add(ms, RMSNORM_EPS), -0.5)
    return mul(mul(a, inv), gain)


def layernorm(a):
    a = _as_tensor(a)
    if a.shape[-1] == 0:
        raise DimensionError("layernorm over zero-length axis")
    mu = mean(a, axis=-1, keepdims=True)
    centered = sub(a, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = pow_(add(var, LAYERNORM_EPS), -0.5)
    return mul(centered, inv)


def adaln(h, scale, shift):
    """Affine modulation of layer-normalized activations."""
    return add(mul(scale, layernorm(h)), shift)


# ---------------------------------------------------------------------------
# convolution

def conv1d(x, kernels, dilation=1, bias=None):
    """Centered (non-causal) dilated 1-D convolution, length-preserving.

    x: [c_in, T], kernels: [c_out, c_in, W] with odd W, bias: [c_out] or None.
    """
    x, w = _as_tensor(x), _as_tensor(kernels, like=x)
    if x.ndim != 2 or w.ndim != 3:
        raise DimensionError(f"conv1d expects x[c,T] and kernels[o,c,W], got {x.shape}, {w.shape}")
    c_out, c_in, width = w.shape
    if width % 2 == 0:
        raise ConfigError(f"conv1d kernel width must be odd, got {width}")
    if x.shape[0] != c_in:
        raise DimensionError(f"conv1d channel mismatch: x has {x.shape[0]}, kernels expect {c_in}")
    dilation = int(dilation)
    if dilation < 1:
        raise ConfigError(f"dilation must be >= 1, got {dilation}")
    T = x.shape[1]
    pad = (width // 2) * dilation
    xp = np.pad(x.data, ((0, 0), (pad, pad)))
    out = np.zeros((c_out, T), dtype=x.dtype)
    for k in range(width):
        out += w.data[:, :, k] @ xp[:, k * dilation:k * dilation + T]

    def grad_x(g):
        gp = np.zeros_like(xp)
        for k in range(width):
            gp[:, k * dilation:k * dilation + T] += w.data[:, :, k].T @ g
        return gp[:, pad:pad + T]

    def grad_w(g):
        gw = np.zeros_like(w.data)
        for k in range(width):
            gw[:, :, k] = g @ xp[:, k * dilation:k * dilation + T].T
        return gw

    pairs = [(x, grad_x), (w, grad_w)]
    if bias is not None:
        b = _as_tensor(bias, like=x)
        if b.shape != (c_out,):
            raise DimensionError(f"bias shape {b.shape} != ({c_out},)")
        out = out + b.data[:, None]
        pairs.append((b, lambda g: g.sum(axis=1)))
    return _make(out, pairs)


# ---------------------------------------------------------------------------
# losses and lookups

def cross_entropy(logits, targets, reduction="mean"):
    """Negative log-likelihood of integer targets under softmax(logits)."""
    logits = _as_tensor(logits)
    idx = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects logits[N,K], got {logits.shape}")
    n, k = logits.shape
    if idx.shape != (n,):
        raise DimensionError(f"targets shape {idx.shape} != ({n},)")
    if idx.min(initial=0) < 0 or idx.max(initial=-1) >= k:
        raise BoundsError(f"target index out of range [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) - shifted[np.arange(n), idx]
    if reduction == "mean":
        out = np.asarray(lse.mean())
        scale = 1.0 / n
    elif reduction == "sum":
        out = np.asarray(lse.sum())
        scale = 1.0
    else:
        raise ConfigError(f"unknown reduction {reduction!r}")
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)

    def grad_fn(g):
        gg = probs.copy()
        gg[np.arange(n), idx] -= 1.0
        return gg * (float(g) * scale)

    return _make(out, [(logits, grad_fn)])


def mse(a, b):
    """Mean squared error over all elements."""
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    if a.shape != b.shape:
        raise DimensionError(f"mse shapes differ: {a.shape} vs {b.shape}")
    d = sub(a, b)
    return mean(mul(d, d))


def gather(a, indices, axis=0):
    """Select rows (or slices along `axis`) by integer index."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.min(initial=0) < 0 or idx.max(initial=-1) >= a.shape[axis]:
        raise BoundsError(f"gather index out of range [0, {a.shape[axis]})")
    out = np.take(a.data, idx, axis=axis).copy()

    def grad_fn(g):
        buf = np.zeros_like(a.data)
        if axis == 0:
            np.add.at(buf, idx, g)
        else:
            key = [slice(None)] * a.ndim
            key[axis] = idx
            np.add.at(buf, tuple(key), g)
        return buf

    return _make(out, [(a, grad_fn)])


def embedding_lookup(table, ids):
    """table[V, d] rows selected by integer ids; scatter-add gradient."""
    return gather(table, ids, axis=0)


# ---------------------------------------------------------------------------
# parameters

class ParameterStore:
    """Named map of trainable leaves; iteration is lexicographic."""

    def __init__(self):
        self._params = {}

    def add(self, name, value, dtype=np.float64):
        if name in self._params:
            raise StateError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)
        t.requires_grad = True
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def tensors(self):
        for _, t in self.items():
            yield t

    def zero_grad(self):
        for t in self.tensors():
            t.zero_grad()

    def merge(self, other, prefix=""):
        for name, t in other.items():
            key = f"{prefix}{name}" if prefix else name
            if key in self._params:
                raise StateError(f"duplicate parameter name {key!r}")
            self._params[key] = t

    def state_arrays(self):
        return {name: t.data for name, t in self.items()}
