"""Dense float64 tensors with a reverse-mode gradient tape.

Operations record themselves on the innermost active :class:`GradTape` when
at least one input requires a gradient.  Outside a tape every operation is a
plain numpy computation, which is what the decoders use.
"""
from __future__ import annotations

import struct
import threading
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import CheckpointError, ContractError, ShapeError

LN_EPS = 1e-5
_local = threading.local()


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        if type(data) is not np.ndarray or data.dtype != np.float64:
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __neg__ = lambda self: scale(self, -1.0)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class GradTape:
    """Ordered record of differentiable operations.

    Records are appended in execution order, which is a topological order of
    the computation graph, so replaying them in reverse visits each node after
    all of its consumers.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self.records)


def active_tape():
    try:
        stack = _local.stack
    except AttributeError:
        return None
    return stack[-1] if stack else None


class no_grad:
    """Suspend recording for the enclosed block."""

    def __enter__(self):
        self._saved = getattr(_local, "stack", None)
        _local.stack = []
        return self

    def __exit__(self, *exc):
        _local.stack = self._saved
        return False


def _result(data, inputs, backward_fn):
    out = Tensor(data)
    tape = active_tape()
    if tape is not None:
        for t in inputs:
            if t.requires_grad:
                out.requires_grad = True
                tape.records.append((out, inputs, backward_fn))
                break
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(tape, loss, params=None):
    """Gradients of scalar ``loss`` with respect to tape leaves.

    Returns a dict keyed by parameter name.  When ``params`` (name -> Tensor)
    is given, every entry gets a gradient, zero if it was unreachable.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for out, inputs, fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if inp.name is not None:
                leaves[key] = inp
    if params is None:
        return {t.name: grads.get(k, np.zeros_like(t.data)) for k, t in leaves.items()}
    result = {}
    for name, p in params.items():
        g = grads.get(id(p))
        result[name] = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
    return result


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result(
        ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def square(x):
    x = as_tensor(x)
    d = x.data
    return _result(d * d, (x,), lambda g: (2.0 * d * g,))


def linear(x, W, b=None):
    """``x @ W.T (+ b)`` for a vector or a stack of row vectors."""
    x, W = as_tensor(x), as_tensor(W)
    b = None if b is None else as_tensor(b)
    xd, Wd = x.data, W.data
    if Wd.ndim != 2 or xd.shape[-1] != Wd.shape[1]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {W.shape}")
    if b is not None and b.data.shape != (Wd.shape[0],):
        raise ShapeError(f"linear: bias shape {b.shape} does not match weight shape {W.shape}")
    y = xd @ Wd.T
    if b is not None:
        y = y + b.data

    def grad(g):
        gx = g @ Wd
        gW = np.outer(g, xd) if xd.ndim == 1 else g.T @ xd
        if b is None:
            return gx, gW
        return gx, gW, (g if g.ndim == 1 else g.sum(axis=0))

    inputs = (x, W) if b is None else (x, W, b)
    return _result(y, inputs, grad)


def vecmat(w, M):
    """``w @ M`` for a weight vector over the rows of ``M``."""
    w, M = as_tensor(w), as_tensor(M)
    wd, Md = w.data, M.data
    if wd.shape[0] != Md.shape[0]:
        raise ShapeError(f"vecmat: weights {w.shape} vs rows {M.shape}")
    return _result(wd @ Md, (w, M), lambda g: (Md @ g, np.outer(wd, g)))


# ---------------------------------------------------------------- activations

def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def elu(x, alpha=1.0):
    x = as_tensor(x)
    d = x.data
    neg = alpha * np.expm1(np.minimum(d, 0.0))
    y = np.where(d > 0, d, neg)
    return _result(y, (x,), lambda g: (g * np.where(d > 0, 1.0, neg + alpha),))


def _sigmoid(d):
    return expit(d)


def sigmoid(x):
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _result(t, (x,), lambda g: (g * (1.0 - t * t),))


_ACTIVATIONS = {"elu": elu, "relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activate(kind, x):
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def softmax(x, axis=-1):
    x = as_tensor(x)
    d = x.data
    e = np.exp(d - d.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)
    return _result(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    d = x.data
    z = d - d.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _result(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Normalise over the last axis, then apply the per-feature affine map."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data
    width = d.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs width {width}")
    xc = d - d.sum(axis=-1, keepdims=True) / width
    inv = 1.0 / np.sqrt((xc * xc).sum(axis=-1, keepdims=True) / width + eps)
    xhat = xc * inv
    gd = gain.data

    def grad(g):
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(d.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gd + bias.data, (x, gain, bias), grad)


# ---------------------------------------------------------------- structure

def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def slice_last(x, start, stop):
    x = as_tensor(x)
    shape = x.shape

    def grad(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _result(x.data[..., start:stop], (x,), grad)


def broadcast_rows(x, n):
    """Stack vector ``x`` into an ``n x len(x)`` matrix."""
    x = as_tensor(x)
    return _result(np.broadcast_to(x.data, (n, x.shape[0])).copy(), (x,), lambda g: (g.sum(axis=0),))


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def mean(x, axis=None):
    x = as_tensor(x)
    d = x.data
    count = d.size if axis is None else d.shape[axis]
    if axis is None:
        return _result(np.asarray(d.sum() / count), (x,), lambda g: (np.full(d.shape, g / count),))
    return _result(
        d.sum(axis=axis) / count, (x,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), d.shape) / count,)
    )


def total(x):
    x = as_tensor(x)
    d = x.data
    return _result(np.asarray(d.sum()), (x,), lambda g: (np.full(d.shape, float(g)),))


def pick(x, index):
    """Element ``index`` of a vector, or row ``index`` of a matrix."""
    x = as_tensor(x)
    shape = x.shape

    def grad(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _result(np.array(x.data[index]), (x,), grad)


# ---------------------------------------------------------------- composites

def glu(x, Wa, Wb, ba=None, bb=None):
    """Gated linear unit ``(Wa x) * sigmoid(Wb x)``."""
    x, Wa, Wb = as_tensor(x), as_tensor(Wa), as_tensor(Wb)
    if Wa.shape[0] != Wb.shape[0]:
        raise ShapeError(f"glu: output widths differ, {Wa.shape} vs {Wb.shape}")
    return mul(linear(x, Wa, ba), sigmoid(linear(x, Wb, bb)))


def lstm_cell(x, h_prev, c_prev, W_ih, W_hh, b):
    """One LSTM step; gate rows are stacked as input, forget, candidate, output."""
    x, h_prev, c_prev, W_ih, W_hh = (as_tensor(t) for t in (x, h_prev, c_prev, W_ih, W_hh))
    hidden = h_prev.shape[-1]
    if W_ih.shape != (4 * hidden, x.shape[-1]) or W_hh.shape != (4 * hidden, hidden):
        raise ShapeError(
            f"lstm_cell: W_ih {W_ih.shape}, W_hh {W_hh.shape} for input {x.shape}, hidden {hidden}"
        )
    z = add(linear(x, W_ih, b), linear(h_prev, W_hh))
    i = sigmoid(slice_last(z, 0, hidden))
    f = sigmoid(slice_last(z, hidden, 2 * hidden))
    g = tanh(slice_last(z, 2 * hidden, 3 * hidden))
    o = sigmoid(slice_last(z, 3 * hidden, 4 * hidden))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


# ---------------------------------------------------------------- init / checks

def xavier(rng, rows, cols):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def grad_check(f, params, eps=1e-5):
    """Worst relative error between tape gradients and central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor computed from
    ``params`` (name -> Tensor).  The denominator is ``max(|a|, |n|, 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    with GradTape() as tape:
        loss = f()
    analytic = backward(tape, loss, params)
    worst = 0.0
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            a_flat = analytic[name].reshape(-1)
            for k in range(flat.size):
                keep = flat[k]
                flat[k] = keep + eps
                up = f().item()
                flat[k] = keep - eps
                down = f().item()
                flat[k] = keep
                numeric = (up - down) / (2.0 * eps)
                a = a_flat[k]
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"HRMG"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params):
    """Write named parameters in the little-endian HRMG layout, atomically."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(_data(params[name]), dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def _data(p):
    return p.data if isinstance(p, Tensor) else np.asarray(p)


def load_checkpoint(path):
    """Read an HRMG file into an ordered dict of name -> float64 array."""
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos = 12
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * size > len(buf):
                raise CheckpointError(f"{path}: truncated payload for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).astype(np.float64).reshape(dims)
            pos += 8 * size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header ({exc})") from None
    return out
