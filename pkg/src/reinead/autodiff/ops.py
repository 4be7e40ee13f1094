"""Differentiable operations.

Every op returns a new :class:`Tensor` whose backward closure maps the
upstream gradient to one gradient per parent (``None`` for parents that do
not receive one).
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, default_dtype


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    else:
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise arithmetic ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return Tensor._from_op(a.data ** p, (a,), backward, "pow")


# unary nonlinearities ----------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._from_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to ``[lo, hi]``; gradient passes only where the input was inside."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    return Tensor._from_op(out, (a,), lambda g: (g * inside,), "clamp")


def softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(out, (a,), backward, "softmax")


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return Tensor._from_op(out, (a,), backward, "log_softmax")


# reductions and shape ------------------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._from_op(np.array(out), (a,), backward, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape} on axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]
    out = np.concatenate([t.data for t in ts], axis=ax)

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    return Tensor._from_op(out, ts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in ts]
    return concat(expanded, axis=axis)


def place(base, patch, row: int, col: int) -> Tensor:
    """Copy of ``base`` (H, W, C) with ``patch`` written at ``[row:, col:]``."""
    base, patch = _pair(base, patch)
    ph, pw = patch.shape[:2]
    if base.ndim != patch.ndim or base.shape[2:] != patch.shape[2:]:
        raise ShapeError(f"place: patch {patch.shape} incompatible with base {base.shape}")
    if row < 0 or col < 0 or row + ph > base.shape[0] or col + pw > base.shape[1]:
        raise ShapeError(f"place: patch {patch.shape} at ({row},{col}) exceeds base {base.shape}")
    out = base.data.copy()
    out[row:row + ph, col:col + pw] = patch.data

    def backward(g):
        gb = g.copy()
        gb[row:row + ph, col:col + pw] = 0
        return gb, g[row:row + ph, col:col + pw].copy()

    return Tensor._from_op(out, (base, patch), backward, "place")


# linear algebra -------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        if not (a.ndim >= 2 and b.ndim >= 2 and a.shape[-1] == b.shape[-2]):
            raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    out = a.data @ b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            ga = _unbroadcast(ga, a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor._from_op(out, (a, b), backward, "matmul")


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation, NHWC input and (kh, kw, Cin, Cout) weights."""
    x, w = _pair(x, w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    kh, kw, cin, cout = w.shape
    if kh > 7 or kw > 7:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than 7x7 is not supported")
    n, hgt, wid, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {w.shape}")
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # win: (n, ho, wo, cin, kh, kw) -> columns ordered (kh, kw, cin)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b) if isinstance(b, Tensor) else Tensor(b, dtype=x.dtype)
        out = out + b.data
        parents.append(b)

    def backward(g):
        g2 = g.reshape(n * ho * wo, cout)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (cols.T @ g2).reshape(w.shape)
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
            gx = gxp[:, padding:padding + hgt, padding:padding + wid, :] if padding else gxp
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=0).reshape(b.shape)
        return (gx, gw, gb) if b is not None else (gx, gw)

    return Tensor._from_op(out, parents, backward, "conv2d")


# sampling ---------------------------------------------------------------------------

class SampleGrid:
    """Precomputed bilinear taps for sampling an (H, W, C) texture.

    ``rows``/``cols`` are fractional texel coordinates; out-of-range
    coordinates are clamped to the border. Only the texture is
    differentiable, the coordinates are treated as constants.

    With ``pool`` > 1 the trailing axis of ``rows``/``cols`` holds ``pool``
    sub-samples per output element which are averaged; ``mask`` (same shape
    as ``rows``) zeroes individual sub-samples.
    """

    def __init__(self, rows, cols, tex_shape: tuple[int, int], mask=None, pool: int = 1):
        h, w = tex_shape
        rows = np.asarray(rows, dtype=np.float64)
        cols = np.asarray(cols, dtype=np.float64)
        r = np.clip(rows, 0.0, h - 1.0)
        c = np.clip(cols, 0.0, w - 1.0)
        r0 = np.minimum(np.floor(r).astype(np.int64), h - 1)
        c0 = np.minimum(np.floor(c).astype(np.int64), w - 1)
        r1 = np.minimum(r0 + 1, h - 1)
        c1 = np.minimum(c0 + 1, w - 1)
        fr = r - r0
        fc = c - c0
        index = np.stack([r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1], axis=-1)
        weight = np.stack([(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc], axis=-1)
        if mask is not None:
            weight = weight * np.asarray(mask, dtype=np.float64)[..., None]
        if pool > 1:
            if rows.shape[-1] != pool:
                raise ShapeError(f"SampleGrid: trailing axis {rows.shape} must equal pool={pool}")
            self.shape = rows.shape[:-1]
            weight = weight / pool
        else:
            self.shape = rows.shape
        n = int(np.prod(self.shape, dtype=np.int64))
        self.tex_shape = (h, w)
        self.index = index.reshape(n, -1)
        self.weight = weight.reshape(n, -1)
        self.coverage = self.weight.sum(axis=1).reshape(self.shape)


def bilinear_sample(texture, grid: SampleGrid) -> Tensor:
    texture = as_tensor(texture)
    h, w = grid.tex_shape
    if texture.shape[:2] != (h, w):
        raise ShapeError(f"bilinear_sample: texture {texture.shape} does not match grid {grid.tex_shape}")
    chans = texture.shape[2:]
    flat = texture.data.reshape(h * w, -1)
    wts = grid.weight.astype(texture.dtype)
    out = np.einsum("pt,ptc->pc", wts, flat[grid.index])
    out = out.reshape(grid.shape + chans)

    def backward(g):
        g2 = g.reshape(-1, flat.shape[1])
        idx = grid.index.ravel()
        contrib = (wts[:, :, None] * g2[:, None, :]).reshape(-1, flat.shape[1])
        gt = np.stack(
            [np.bincount(idx, weights=contrib[:, k], minlength=h * w) for k in range(flat.shape[1])], axis=1
        )
        return (gt.astype(texture.dtype).reshape(texture.shape),)

    return Tensor._from_op(out, (texture,), backward, "bilinear_sample")


# composite losses --------------------------------------------------------------------

def cross_entropy(logits, labels) -> Tensor:
    """Per-row negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    k = logits.shape[-1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must lie in [0, {k}), got {labels.tolist()}")
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot.reshape(-1, k)[np.arange(labels.size), labels.ravel()] = 1.0
    nll = -sum(mul(log_softmax(logits), onehot), axis=-1)
    return nll


def entropy(logits) -> Tensor:
    """Shannon entropy (nats) of ``softmax(logits)`` along the last axis."""
    lp = log_softmax(logits)
    p = softmax(logits)
    return -sum(mul(p, lp), axis=-1)


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=default_dtype()), requires_grad=requires_grad)
