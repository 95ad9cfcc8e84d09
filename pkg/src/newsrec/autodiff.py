"""Dense float64 tensors with taped reverse-mode differentiation.

The op set is exactly what the recommender needs: affine maps, masked
softmax, dilated 1D convolution over titles, 3D convolution / max pooling
over match cubes, differentiable gather for history selection, and a few
elementwise helpers. Storage is numpy; recording happens only inside an
active Graph, so frozen-parameter inference pays no taping cost.

Everything is float64 so central finite differences are decisive in tests.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Shapes do not line up for the requested op."""


class NumericsError(ArithmeticError):
    """An op produced NaN or Inf."""


class GraphError(RuntimeError):
    """Backward misuse: no recorded graph, non-scalar loss, or reuse."""


class DegenerateInputError(ValueError):
    """Input has no valid entries where at least one is required."""


_GRAPHS: list["Graph"] = []
_COUNTERS: list["FlopCounter"] = []
_MARGINS: list[list[float]] = []


class Graph:
    """Tape of recorded ops in execution (hence topological) order.

    Use as a context manager around a forward pass; ops executed inside
    record themselves. backward() may be called exactly once per graph.
    """

    __slots__ = ("_tape", "_used")

    def __init__(self):
        self._tape = []
        self._used = False

    def __enter__(self):
        _GRAPHS.append(self)
        return self

    def __exit__(self, *exc):
        _GRAPHS.pop()
        return False

    def __len__(self):
        return len(self._tape)


class FlopCounter:
    """Accumulates multiply-add counts of ops run while active."""

    __slots__ = ("madds",)

    def __init__(self):
        self.madds = 0


@contextlib.contextmanager
def count_flops():
    counter = FlopCounter()
    _COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _COUNTERS.pop()


def _bump(n):
    for c in _COUNTERS:
        c.madds += int(n)


@contextlib.contextmanager
def trace_margins():
    """Collect distances to nondifferentiable boundaries (ReLU kinks,
    pooling ties, selection and threshold gaps) seen during a forward
    pass. Gradient checks resample inputs until all margins are safe."""
    margins: list[float] = []
    _MARGINS.append(margins)
    try:
        yield margins
    finally:
        _MARGINS.pop()


def push_margin(value):
    for m in _MARGINS:
        m.append(float(value))


class Tensor:
    """A dense float64 array plus a gradient slot.

    data is C-contiguous float64; grad is None until backward touches it.
    Tensors created outside a Graph never record and are safe to share.
    """

    __slots__ = ("data", "grad", "requires_grad", "_graph")

    def __init__(self, data, requires_grad=False):
        # asarray with order="C" keeps 0-d shapes (ascontiguousarray would
        # promote them to (1,))
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._graph = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data, op, inputs, bwd):
    if not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values produced by {op}")
    out = Tensor(data)
    graph = _GRAPHS[-1] if _GRAPHS else None
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._graph = graph
        graph._tape.append((out, bwd))
    return out


def backward(loss):
    """Run reverse-mode accumulation from a scalar loss, once per graph."""
    if not isinstance(loss, Tensor) or loss._graph is None:
        raise GraphError("loss is not attached to a recorded graph")
    if loss.data.size != 1:
        raise GraphError("backward requires a scalar loss")
    graph = loss._graph
    if graph._used:
        raise GraphError("backward was already called on this graph")
    graph._used = True
    loss.grad = np.ones_like(loss.data)
    for out, bwd in reversed(graph._tape):
        if out.grad is not None:
            bwd(out.grad)


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data
    _bump(data.size)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, "add", (a, b), bwd)


def neg(a):
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, -g)

    return _make(-a.data, "neg", (a,), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    _bump(data.size)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, "mul", (a, b), bwd)


def matmul(a, b):
    """Matrix product for 1D/2D operands with numpy @ semantics."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise DimensionError(f"matmul needs 1D/2D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise DimensionError(f"matmul inner mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    k = a.data.shape[-1]
    _bump(max(data.size, 1) * k)

    def bwd(g):
        if a.ndim == 2 and b.ndim == 2:
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        elif a.ndim == 2 and b.ndim == 1:
            _accum(a, np.outer(g, b.data))
            _accum(b, a.data.T @ g)
        elif a.ndim == 1 and b.ndim == 2:
            _accum(a, b.data @ g)
            _accum(b, np.outer(a.data, g))
        else:
            _accum(a, g * b.data)
            _accum(b, g * a.data)

    return _make(data, "matmul", (a, b), bwd)


def dot(a, b):
    return matmul(a, b)


def transpose(a):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError("transpose expects a 2D tensor")

    def bwd(g):
        _accum(a, g.T)

    return _make(a.data.T.copy(), "transpose", (a,), bwd)


def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    _bump(a.size)

    def bwd(g):
        gg = g
        if axis is not None and not keepdims:
            ax = axis if isinstance(axis, tuple) else (axis,)
            ax = tuple(x % a.data.ndim for x in ax)
            for x in sorted(ax):
                gg = np.expand_dims(gg, x)
        _accum(a, np.broadcast_to(gg, a.data.shape))

    return _make(data, "sum", (a,), bwd)


def exp(a):
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    _bump(a.size)

    def bwd(g):
        _accum(a, g * data)

    return _make(data, "exp", (a,), bwd)


def log(a):
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    _bump(a.size)

    def bwd(g):
        _accum(a, g / a.data)

    return _make(data, "log", (a,), bwd)


def relu(a):
    a = _as_tensor(a)
    if _MARGINS and a.size:
        push_margin(np.abs(a.data).min())
    mask = a.data > 0.0
    data = np.where(mask, a.data, 0.0)

    def bwd(g):
        _accum(a, g * mask)

    return _make(data, "relu", (a,), bwd)


def softmax(x, mask=None, axis=-1, allow_empty=False):
    """Softmax along `axis`; masked entries are exactly 0 with exactly-0
    gradient. A fully masked slice raises unless allow_empty, in which
    case the whole slice is exactly 0 (used for all-padding titles)."""
    x = _as_tensor(x)
    xd = x.data
    if mask is None:
        mx = xd.max(axis=axis, keepdims=True)
        e = np.exp(xd - mx)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        any_valid = m.any(axis=axis, keepdims=True)
        if not allow_empty and not any_valid.all():
            raise DegenerateInputError("softmax slice has no unmasked entries")
        masked = np.where(m, xd, -np.inf)
        mx = masked.max(axis=axis, keepdims=True)
        mx = np.where(any_valid, mx, 0.0)
        e = np.exp(np.where(m, xd - mx, -np.inf))
    denom = e.sum(axis=axis, keepdims=True)
    p = e / np.where(denom == 0.0, 1.0, denom)
    _bump(3 * x.size)

    def bwd(g):
        inner = (p * g).sum(axis=axis, keepdims=True)
        _accum(x, p * (g - inner))

    return _make(p, "softmax", (x,), bwd)


def conv1d_dilated(seq, kernel, bias=None, dilation=1):
    """Dilated same-length 1D convolution over word positions, plus ReLU.

    seq: (N, d_in) or batched (B, N, d_in). kernel: (2w+1, d_in, f).
    Zero-pads w*dilation positions on each side so output length is N.
    """
    seq, kernel = _as_tensor(seq), _as_tensor(kernel)
    if bias is not None:
        bias = _as_tensor(bias)
    if kernel.ndim != 3:
        raise DimensionError("conv1d kernel must be (width, d_in, f)")
    kw, d_in, f = kernel.shape
    if kw % 2 != 1:
        raise DimensionError("conv1d kernel width must be odd")
    if seq.ndim not in (2, 3):
        raise DimensionError("conv1d input must be (N, d) or (B, N, d)")
    n = seq.shape[-2]
    if n < 1:
        raise DimensionError("conv1d input has no positions")
    if seq.shape[-1] != d_in:
        raise DimensionError(f"conv1d channel mismatch: {seq.shape[-1]} vs {d_in}")
    if dilation < 1:
        raise DimensionError("conv1d dilation must be >= 1")
    if bias is not None and bias.shape != (f,):
        raise DimensionError("conv1d bias must be (f,)")

    w = kw // 2
    pad = w * dilation
    spec = ((0, 0),) * (seq.ndim - 2) + ((pad, pad), (0, 0))
    padded = np.pad(seq.data, spec)
    idx = np.arange(n)[:, None] + np.arange(kw)[None, :] * dilation
    taps = padded[..., idx, :]                       # (..., N, kw, d_in)
    flat = taps.reshape(taps.shape[:-2] + (kw * d_in,))
    kflat = kernel.data.reshape(kw * d_in, f)
    pre = flat @ kflat
    if bias is not None:
        pre = pre + bias.data
    if _MARGINS and pre.size:
        push_margin(np.abs(pre).min())
    out = np.where(pre > 0.0, pre, 0.0)
    _bump(flat.size * f)
    inputs = (seq, kernel) if bias is None else (seq, kernel, bias)

    def bwd(g):
        gpre = np.where(pre > 0.0, g, 0.0)
        if bias is not None:
            _accum(bias, gpre.reshape(-1, f).sum(axis=0))
        if kernel.requires_grad:
            gk = flat.reshape(-1, kw * d_in).T @ gpre.reshape(-1, f)
            _accum(kernel, gk.reshape(kw, d_in, f))
        if seq.requires_grad:
            gtaps = (gpre @ kflat.T).reshape(taps.shape)
            gpad = np.zeros_like(padded)
            if seq.ndim == 3:
                b = seq.shape[0]
                np.add.at(gpad, (np.arange(b)[:, None, None], idx[None, :, :]), gtaps)
                _accum(seq, gpad[:, pad:pad + n, :])
            else:
                np.add.at(gpad, idx, gtaps)
                _accum(seq, gpad[pad:pad + n, :])

    return _make(out, "conv1d_dilated", inputs, bwd)


def conv3d(cube, kernel, bias=None):
    """Same-shape 3D convolution (odd cubic kernel, zero pad) plus ReLU.

    cube: (C_in, D, H, W). kernel: (C_out, C_in, k, k, k)."""
    cube, kernel = _as_tensor(cube), _as_tensor(kernel)
    if bias is not None:
        bias = _as_tensor(bias)
    if cube.ndim != 4 or kernel.ndim != 5:
        raise DimensionError("conv3d expects cube (C,D,H,W) and kernel (O,C,k,k,k)")
    c_in, d, h, w = cube.shape
    c_out, c2, k1, k2, k3 = kernel.shape
    if c2 != c_in:
        raise DimensionError(f"conv3d channel mismatch: {c_in} vs {c2}")
    if not (k1 == k2 == k3) or k1 % 2 != 1:
        raise DimensionError("conv3d kernel must be odd and cubic")
    if min(d, h, w) < 1:
        raise DimensionError("conv3d spatial extent must be positive")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError("conv3d bias must be (C_out,)")

    p = k1 // 2
    padded = np.pad(cube.data, ((0, 0), (p, p), (p, p), (p, p)))
    view = sliding_window_view(padded, (k1, k1, k1), axis=(1, 2, 3))
    pre = np.tensordot(view, kernel.data, axes=((0, 4, 5, 6), (1, 2, 3, 4)))
    pre = np.moveaxis(pre, -1, 0)                    # (C_out, D, H, W)
    if bias is not None:
        pre = pre + bias.data[:, None, None, None]
    if _MARGINS and pre.size:
        push_margin(np.abs(pre).min())
    out = np.where(pre > 0.0, pre, 0.0)
    _bump(c_out * c_in * k1 ** 3 * d * h * w)
    inputs = (cube, kernel) if bias is None else (cube, kernel, bias)

    def bwd(g):
        gpre = np.where(pre > 0.0, g, 0.0)
        if bias is not None:
            _accum(bias, gpre.sum(axis=(1, 2, 3)))
        if kernel.requires_grad:
            gk = np.tensordot(gpre, view, axes=((1, 2, 3), (1, 2, 3)))
            _accum(kernel, gk)
        if cube.requires_grad:
            # adjoint of a stride-1 correlation: correlate the padded
            # output gradient with the spatially flipped kernel
            flipped = kernel.data[:, :, ::-1, ::-1, ::-1]
            q = k1 - 1
            gpp = np.pad(gpre, ((0, 0), (q, q), (q, q), (q, q)))
            gview = sliding_window_view(gpp, (k1, k1, k1), axis=(1, 2, 3))
            gpad = np.tensordot(gview, flipped, axes=((0, 4, 5, 6), (0, 2, 3, 4)))
            gpad = np.moveaxis(gpad, -1, 0)          # (C_in, D+2p, H+2p, W+2p)
            _accum(cube, gpad[:, p:p + d, p:p + h, p:p + w])

    return _make(out, "conv3d", inputs, bwd)


def maxpool3d(cube, window=3):
    """Non-overlapping 3D max pooling with ceil semantics.

    Output dims are ceil(extent / window); windows hanging off the edge
    pool the elements that exist. Ties route the gradient to the lowest
    flat index within the window."""
    cube = _as_tensor(cube)
    if cube.ndim != 4:
        raise DimensionError("maxpool3d expects (C, D, H, W)")
    if window < 1:
        raise DimensionError("maxpool3d window must be >= 1")
    c, d, h, w = cube.shape
    if min(d, h, w) < 1:
        raise DimensionError("maxpool3d spatial extent must be positive")
    do = -(-d // window)
    ho = -(-h // window)
    wo = -(-w // window)
    padded = np.full((c, do * window, ho * window, wo * window), -np.inf)
    padded[:, :d, :h, :w] = cube.data
    blocks = padded.reshape(c, do, window, ho, window, wo, window)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4, 6).reshape(c, do, ho, wo, window ** 3)
    out = blocks.max(axis=-1)
    arg = blocks.argmax(axis=-1)
    if _MARGINS and window > 1:
        # tie margins matter only where the max is nonzero: pooling here
        # always follows a clamped activation, so tied zeros sit in a
        # flat region and cannot flip under a finite-difference nudge
        second = np.partition(blocks, -2, axis=-1)[..., -2]
        live = np.isfinite(second) & (out != 0.0)
        if live.any():
            push_margin((out[live] - second[live]).min())
    _bump(out.size * window ** 3)

    def bwd(g):
        gblocks = np.zeros((c, do, ho, wo, window ** 3))
        np.put_along_axis(gblocks, arg[..., None], g[..., None], axis=-1)
        gpad = gblocks.reshape(c, do, ho, wo, window, window, window)
        gpad = gpad.transpose(0, 1, 4, 2, 5, 3, 6).reshape(padded.shape)
        _accum(cube, gpad[:, :d, :h, :w])

    return _make(out, "maxpool3d", (cube,), bwd)


def take(x, indices):
    """Differentiable row gather along axis 0; the index choice itself
    carries no gradient, selected rows pass gradient straight through."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError("take expects a 1D index list")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"take index out of range for axis of {x.shape[0]}")
    data = x.data[idx]

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            _accum(x, gx)

    return _make(data, "take", (x,), bwd)


def index0(x, i):
    """Differentiable single-row gather: x[i] with the leading axis dropped."""
    x = _as_tensor(x)
    i = int(i)
    if not 0 <= i < x.shape[0]:
        raise IndexError(f"index {i} out of range for axis of {x.shape[0]}")
    data = x.data[i].copy()

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[i] = g
            _accum(x, gx)

    return _make(data, "index0", (x,), bwd)


def reshape(x, shape):
    x = _as_tensor(x)
    data = x.data.reshape(shape).copy()

    def bwd(g):
        _accum(x, g.reshape(x.data.shape))

    return _make(data, "reshape", (x,), bwd)


def concat(tensors, axis=0):
    ts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]

    def bwd(g):
        start = 0
        for t, s in zip(ts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + s)
            _accum(t, g[tuple(sl)])
            start += s

    return _make(data, "concat", tuple(ts), bwd)


def stack(tensors, axis=0):
    ts = [_as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in ts], axis=axis)

    def bwd(g):
        for i, t in enumerate(ts):
            _accum(t, np.take(g, i, axis=axis))

    return _make(data, "stack", tuple(ts), bwd)


def threshold_gate(x, threshold):
    """Sparse gate: entries below threshold become exactly 0, entries at
    or above pass through with derivative exactly 1."""
    x = _as_tensor(x)
    threshold = float(threshold)
    if _MARGINS and x.size:
        push_margin(np.abs(x.data - threshold).min())
    mask = x.data >= threshold
    data = np.where(mask, x.data, 0.0)

    def bwd(g):
        _accum(x, g * mask)

    return _make(data, "threshold_gate", (x,), bwd)


def where_mask(x, keep, fill):
    """Replace entries where keep is False by a constant; no gradient
    flows to replaced entries."""
    x = _as_tensor(x)
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), x.shape)
    data = np.where(keep, x.data, float(fill))

    def bwd(g):
        _accum(x, g * keep)

    return _make(data, "where_mask", (x,), bwd)


def row_cosine(a, b):
    """Cosine similarity of each row of a (M, d) against b (d,).

    Rows (or b) with zero norm yield exactly 0 with exactly-0 gradient."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 1 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"row_cosine shapes: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    an = np.sqrt((ad * ad).sum(axis=1))
    bn = math.sqrt(float(bd @ bd))
    denom = an * bn
    ok = denom > 0.0
    safe = np.where(ok, denom, 1.0)
    s = np.where(ok, (ad @ bd) / safe, 0.0)
    _bump(3 * ad.size)

    def bwd(g):
        geff = np.where(ok, g, 0.0)
        coef = geff / safe
        if a.requires_grad:
            safe_an2 = np.where(ok, an * an, 1.0)
            ga = coef[:, None] * bd[None, :] - (geff * s / safe_an2)[:, None] * ad
            _accum(a, ga)
        if b.requires_grad and bn > 0.0:
            gb = coef @ ad - ((geff * s).sum() / (bn * bn)) * bd
            _accum(b, gb)

    return _make(s, "row_cosine", (a, b), bwd)


def dropout(x, rate, rng):
    """Inverted dropout; call only in training mode (identity is the
    caller's eval path)."""
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise DimensionError("dropout rate must be in [0, 1)")
    if rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    data = x.data * keep * scale

    def bwd(g):
        _accum(x, g * keep * scale)

    return _make(data, "dropout", (x,), bwd)


def pair_scores(selected_fine, candidate_fine):
    """Per-level scaled dot products between selected history words and
    candidate words.

    selected_fine: (K, L, N, f), candidate_fine: (L, N, f).
    Returns (L, K, N, N) where out[l, v, i, j] = t_v[l, i] . p[l, j] / sqrt(f).
    """
    t, p = _as_tensor(selected_fine), _as_tensor(candidate_fine)
    if t.ndim != 4 or p.ndim != 3:
        raise DimensionError("pair_scores expects (K,L,N,f) and (L,N,f)")
    k, l, n, f = t.shape
    if p.shape != (l, n, f):
        raise DimensionError(f"pair_scores level mismatch: {t.shape} vs {p.shape}")
    inv = 1.0 / math.sqrt(f)
    a = np.ascontiguousarray(t.data.transpose(1, 0, 2, 3)).reshape(l, k * n, f)
    b = np.ascontiguousarray(p.data.transpose(0, 2, 1))          # (L, f, N)
    cube = (a @ b).reshape(l, k, n, n) * inv
    _bump(l * k * n * n * f)

    def bwd(g):
        gs = g.reshape(l, k * n, n) * inv
        if t.requires_grad:
            ga = gs @ p.data                                     # (L, K*N, f)
            _accum(t, ga.reshape(l, k, n, f).transpose(1, 0, 2, 3))
        if p.requires_grad:
            gb = a.transpose(0, 2, 1) @ gs                       # (L, f, N)
            _accum(p, gb.transpose(0, 2, 1))

    return _make(cube, "pair_scores", (t, p), bwd)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)
