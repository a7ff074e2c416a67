"""Dense-tensor engine with tape-based reverse-mode autodiff.

NHWC layout for images, float32 by default, float64 in gradient-check mode.
Reductions use a fixed order so repeated runs are bitwise identical.
"""

import numpy as np

DEFAULT_DTYPE = np.float32


class EngineError(Exception):
    pass


class ShapeError(EngineError):
    pass


class DomainError(EngineError):
    pass


class Tensor:
    """N-d numeric array with optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

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
        return float(self.data)

    def detach(self):
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        return out

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = g.copy() if g.base is not None or not g.flags.owndata else g
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class Tape:
    """Ordered record of differentiable ops; creation order is topological."""

    def __init__(self):
        self.nodes = []  # (out Tensor, backward callable taking grad array)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.pop()
        assert popped is self
        return False

    def record(self, out, backward_fn):
        self.nodes.append((out, backward_fn))

    def backward(self, loss):
        backward(self, loss)


_TAPES = []


def active_tape():
    return _TAPES[-1] if _TAPES else None


def backward(tape, loss):
    """Reverse sweep over the tape, seeding d(loss)/d(loss) = 1."""
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {getattr(loss, 'shape', None)}")
    if not tape.nodes:
        raise EngineError("backward: tape is empty")
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape.nodes):
        if out.grad is not None:
            fn(out.grad)
            if out is not loss:
                out.grad = None  # free intermediate buffers


def _record(out, inputs, backward_fn):
    tape = active_tape()
    if tape is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        tape.record(out, backward_fn)
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_same_dtype(op, a, b):
    if a.dtype != b.dtype:
        raise EngineError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    _check_same_dtype("add", a, b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _record(out, (a, b), bwd)


def sub(a, b):
    _check_same_dtype("sub", a, b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _record(out, (a, b), bwd)


def mul(a, b):
    _check_same_dtype("mul", a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), bwd)


def div(a, b):
    _check_same_dtype("div", a, b)
    if np.any(b.data == 0):
        raise DomainError("div: zero denominator")
    out = Tensor(a.data / b.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out.data / b.data, b.shape))

    return _record(out, (a, b), bwd)


def scale(a, s):
    out = Tensor(a.data * a.dtype.type(s))

    def bwd(g):
        if a.requires_grad:
            a._accum(g * a.dtype.type(s))

    return _record(out, (a,), bwd)


def _elementwise(a, fwd_data, dfn, name):
    out = Tensor(fwd_data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * dfn())

    return _record(out, (a,), bwd)


def relu(a):
    return _elementwise(a, np.maximum(a.data, 0), lambda: (a.data > 0).astype(a.dtype), "relu")


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(a):
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    out = Tensor(0.5 * x * (1.0 + t))

    def bwd(g):
        if a.requires_grad:
            d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
            a._accum(g * d.astype(a.dtype))

    return _record(out, (a,), bwd)


def tanh(a):
    t = np.tanh(a.data)
    return _elementwise(a, t, lambda: (1.0 - t * t).astype(a.dtype), "tanh")


def sigmoid(a):
    s = _sigmoid_np(a.data)
    return _elementwise(a, s, lambda: (s * (1.0 - s)).astype(a.dtype), "sigmoid")


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(a):
    e = np.exp(a.data)
    if not np.all(np.isfinite(e)):
        raise DomainError("exp: overflow to non-finite values")
    return _elementwise(a, e, lambda: e, "exp")


def log(a):
    if np.any(a.data <= 0):
        raise DomainError("log: non-positive input")
    return _elementwise(a, np.log(a.data), lambda: 1.0 / a.data, "log")


def absval(a):
    return _elementwise(a, np.abs(a.data), lambda: np.sign(a.data).astype(a.dtype), "abs")


def clamp(a, lo, hi):
    if not lo < hi:
        raise DomainError(f"clamp: need lo < hi, got ({lo}, {hi})")
    out = Tensor(np.clip(a.data, lo, hi))

    def bwd(g):
        if a.requires_grad:
            mask = ((a.data > lo) & (a.data < hi)).astype(a.dtype)
            a._accum(g * mask)

    return _record(out, (a,), bwd)


def bce_logits(logits, target):
    """Elementwise binary cross-entropy on logits, numerically stable.

    target is treated as a constant; gradient w.r.t. logits is sigmoid(z) - t.
    """
    z = logits.data
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=z.dtype)
    loss = np.maximum(z, 0) - t * z + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(loss)

    def bwd(g):
        if logits.requires_grad:
            logits._accum(g * (_sigmoid_np(z) - t))

    return _record(out, (logits,), bwd)


# ---------------------------------------------------------------------------
# reductions and losses


def tsum(a):
    out = Tensor(np.array(a.data.sum(), dtype=a.dtype))

    def bwd(g):
        if a.requires_grad:
            a._accum(np.broadcast_to(g, a.shape).astype(a.dtype, copy=True))

    return _record(out, (a,), bwd)


def tmean(a):
    n = a.size
    out = Tensor(np.array(a.data.mean(), dtype=a.dtype))

    def bwd(g):
        if a.requires_grad:
            a._accum(np.broadcast_to(g / n, a.shape).astype(a.dtype, copy=True))

    return _record(out, (a,), bwd)


def l1(a, b):
    """Mean absolute difference."""
    if a.shape != b.shape:
        raise ShapeError(f"l1: shape mismatch {a.shape} vs {b.shape}")
    return tmean(absval(sub(a, b)))


def mse(a, b):
    """Mean squared difference."""
    if a.shape != b.shape:
        raise ShapeError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    d = sub(a, b)
    return tmean(mul(d, d))


# ---------------------------------------------------------------------------
# normalization


def softmax(a):
    """Softmax over the last dimension."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        if a.requires_grad:
            dot = (g * s).sum(axis=-1, keepdims=True)
            a._accum(s * (g - dot))

    return _record(out, (a,), bwd)


def layer_norm(a, eps=1e-6):
    """Normalize the last dimension to zero mean / unit variance (no affine)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Tensor(y.astype(a.dtype))

    def bwd(g):
        if a.requires_grad:
            n = x.shape[-1]
            gy = g * inv
            a._accum(gy - gy.mean(axis=-1, keepdims=True) - y * (g * y * inv).mean(axis=-1, keepdims=True))

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape))

    def bwd(g):
        if a.requires_grad:
            a._accum(g.reshape(a.shape))

    return _record(out, (a,), bwd)


def transpose(a, axes):
    axes = tuple(axes)
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    inv = tuple(np.argsort(axes))

    def bwd(g):
        if a.requires_grad:
            a._accum(np.ascontiguousarray(g.transpose(inv)))

    return _record(out, (a,), bwd)


def concat(tensors, axis=-1):
    if not tensors:
        raise ShapeError("concat: empty input list")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(np.ascontiguousarray(g[tuple(idx)]))

    return _record(out, tuple(tensors), bwd)


def narrow(a, axis, start, length):
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    out = Tensor(np.ascontiguousarray(a.data[tuple(idx)]))

    def bwd(g):
        if a.requires_grad:
            buf = np.zeros(a.shape, dtype=a.dtype)
            buf[tuple(idx)] = g
            a._accum(buf)

    return _record(out, (a,), bwd)


def gather_rows(table, idx):
    """Row lookup table[idx]; gradient scatter-adds into the selected rows."""
    idx = np.asarray(idx)
    out = Tensor(table.data[idx])

    def bwd(g):
        if table.requires_grad:
            buf = np.zeros(table.shape, dtype=table.dtype)
            np.add.at(buf, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
            table._accum(buf)

    return _record(out, (table,), bwd)


# ---------------------------------------------------------------------------
# matmul


def matmul(a, b):
    _check_same_dtype("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: need ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accum(_unbroadcast(gb, b.shape))

    return _record(out, (a, b), bwd)
