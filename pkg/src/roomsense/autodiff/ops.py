"""Differentiable primitives over ``Tensor``.

Every public op is registered in ``OPS`` so the gradient-check suite can
enumerate coverage. Broadcasting is deliberately restricted: elementwise
ops accept equal shapes or a size-1 operand, anything else must go
through ``expand``/``reshape`` explicitly. Convolutions use a
shift-and-accumulate formulation (one tensordot per kernel tap), which
keeps memory flat and makes the backward pass bit-deterministic.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError, ShapeError
from . import tensor as _t
from .tensor import Tensor, as_tensor

OPS = {}

_EPS = 1e-8


def _op(name):
    def deco(fn):
        OPS[name] = fn
        return fn
    return deco


def _make(name, inputs, data, backward_fn):
    out = Tensor(data)
    out.is_leaf = False
    if _t.grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _t.tape().record(name, inputs, out, backward_fn)
    return out


def _check_elementwise(op, a, b):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(op, a.shape, b.shape, detail="use expand() for non-scalar broadcast")


def _reduce_to(g, shape):
    # Undo scalar broadcasting: a size-1 operand absorbs the full sum.
    if tuple(g.shape) == tuple(shape):
        return g
    return np.full(shape, np.sum(g), dtype=g.dtype)


# ---------------------------------------------------------------------------
# elementwise arithmetic

@_op("add")
def add(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_elementwise("add", a, b)
    data = a.data + b.data

    def bwd(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make("add", (a, b), data, bwd)


@_op("sub")
def sub(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_elementwise("sub", a, b)
    data = a.data - b.data

    def bwd(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _make("sub", (a, b), data, bwd)


@_op("mul")
def mul(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_elementwise("mul", a, b)
    ad, bd = a.data, b.data
    data = ad * bd

    def bwd(g):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return _make("mul", (a, b), data, bwd)


@_op("div")
def div(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_elementwise("div", a, b)
    ad, bd = a.data, b.data
    data = ad / bd

    def bwd(g):
        return _reduce_to(g / bd, a.shape), _reduce_to(-g * ad / (bd * bd), b.shape)

    return _make("div", (a, b), data, bwd)


@_op("neg")
def neg(a):
    data = -a.data

    def bwd(g):
        return (-g,)

    return _make("neg", (a,), data, bwd)


# ---------------------------------------------------------------------------
# shape plumbing

@_op("reshape")
def reshape(a, shape):
    shape = tuple(shape)
    data = a.data.reshape(shape)
    old = a.shape

    def bwd(g):
        return (g.reshape(old),)

    return _make("reshape", (a,), data, bwd)


@_op("transpose")
def transpose(a, axes):
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return _make("transpose", (a,), data, bwd)


@_op("expand")
def expand(a, shape):
    """Broadcast size-1 axes of ``a`` up to ``shape`` (ndim must match)."""
    shape = tuple(shape)
    if a.ndim != len(shape):
        raise ShapeError("expand", a.shape, shape, detail="rank mismatch")
    for s_in, s_out in zip(a.shape, shape):
        if s_in != s_out and s_in != 1:
            raise ShapeError("expand", a.shape, shape)
    data = np.broadcast_to(a.data, shape).copy()
    axes = tuple(i for i, (s_in, s_out) in enumerate(zip(a.shape, shape)) if s_in == 1 and s_out != 1)

    def bwd(g):
        return (np.sum(g, axis=axes, keepdims=True) if axes else g,)

    return _make("expand", (a,), data, bwd)


@_op("concat")
def concat(tensors, axis=0):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make("concat", tuple(tensors), data, bwd)


@_op("slice_axis")
def slice_axis(a, axis, start, stop):
    idx = tuple(slice(start, stop) if i == axis else slice(None) for i in range(a.ndim))
    data = a.data[idx].copy()
    full = a.shape

    def bwd(g):
        da = np.zeros(full, dtype=g.dtype)
        da[idx] = g
        return (da,)

    return _make("slice_axis", (a,), data, bwd)


@_op("gather")
def gather(a, idx, axis=0):
    """Index ``a`` with an integer array along one axis (np.take semantics)."""
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise DataError(f"gather: index out of range for axis of size {a.shape[axis]}")
    data = np.take(a.data, idx, axis=axis)
    full = a.shape

    def bwd(g):
        da = np.zeros(full, dtype=g.dtype)
        sel = tuple(idx if i == axis else slice(None) for i in range(len(full)))
        np.add.at(da, sel, g)
        return (da,)

    return _make("gather", (a,), data, bwd)


# ---------------------------------------------------------------------------
# linear algebra

@_op("matmul")
def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    data = ad @ bd

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _make("matmul", (a, b), data, bwd)


# ---------------------------------------------------------------------------
# convolution and pooling

def _pad_hw(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


@_op("conv2d")
def conv2d(x, w, stride=1, padding=0):
    """NCHW convolution, weight (F, C, kh, kw). Bias lives in the module."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    s, p = int(stride), int(padding)
    N, C, H, W = x.shape
    F, _, kh, kw = w.shape
    xp = _pad_hw(x.data, p)
    Hp, Wp = xp.shape[2], xp.shape[3]
    Ho, Wo = (Hp - kh) // s + 1, (Wp - kw) // s + 1
    wd = w.data
    acc = np.zeros((N, Ho, Wo, F), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i:i + s * Ho:s, j:j + s * Wo:s]
            acc += np.tensordot(xs, wd[:, :, i, j], axes=([1], [1]))
    data = acc.transpose(0, 3, 1, 2)

    def bwd(g):
        gn = g.transpose(0, 2, 3, 1)  # (N,Ho,Wo,F)
        dw = np.zeros_like(wd)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, :, i:i + s * Ho:s, j:j + s * Wo:s]
                dw[:, :, i, j] = np.tensordot(gn, xs, axes=([0, 1, 2], [0, 2, 3]))
                dxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += np.tensordot(
                    gn, wd[:, :, i, j], axes=([3], [0])).transpose(0, 3, 1, 2)
        dx = dxp[:, :, p:p + H, p:p + W] if p else dxp
        return dx, dw

    return _make("conv2d", (x, w), data, bwd)


@_op("depthwise_conv2d")
def depthwise_conv2d(x, w, stride=1, padding=0):
    """Per-channel convolution, weight (C, kh, kw)."""
    if x.ndim != 4 or w.ndim != 3 or x.shape[1] != w.shape[0]:
        raise ShapeError("depthwise_conv2d", x.shape, w.shape)
    s, p = int(stride), int(padding)
    N, C, H, W = x.shape
    _, kh, kw = w.shape
    xp = _pad_hw(x.data, p)
    Hp, Wp = xp.shape[2], xp.shape[3]
    Ho, Wo = (Hp - kh) // s + 1, (Wp - kw) // s + 1
    wd = w.data
    data = np.zeros((N, C, Ho, Wo), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            data += xp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] * wd[None, :, i, j, None, None]

    def bwd(g):
        dw = np.zeros_like(wd)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, :, i:i + s * Ho:s, j:j + s * Wo:s]
                dw[:, i, j] = np.einsum("nchw,nchw->c", g, xs)
                dxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += g * wd[None, :, i, j, None, None]
        dx = dxp[:, :, p:p + H, p:p + W] if p else dxp
        return dx, dw

    return _make("depthwise_conv2d", (x, w), data, bwd)


@_op("max_pool2d")
def max_pool2d(x):
    """2x2 stride-2 max pool; ties route the gradient to the first max."""
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError("max_pool2d", x.shape, detail="H and W must be even")
    blocks = x.data.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(N, C, H // 2, W // 2, 4)
    arg = np.argmax(flat, axis=-1)
    data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, arg[..., None], g[..., None], axis=-1)
        dx = dflat.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
        return (dx,)

    return _make("max_pool2d", (x,), data, bwd)


@_op("nearest_upsample2x")
def nearest_upsample2x(x):
    N, C, H, W = x.shape
    data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bwd(g):
        return (g.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return _make("nearest_upsample2x", (x,), data, bwd)


# ---------------------------------------------------------------------------
# pointwise nonlinearities

@_op("relu")
def relu(a):
    mask = a.data > 0
    data = np.where(mask, a.data, 0)

    def bwd(g):
        return (g * mask,)

    return _make("relu", (a,), data, bwd)


@_op("sigmoid")
def sigmoid(a):
    # exp overflow at very negative inputs still yields the correct 0
    with np.errstate(over="ignore"):
        data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        return (g * data * (1.0 - data),)

    return _make("sigmoid", (a,), data, bwd)


@_op("softplus")
def softplus(a):
    x = a.data
    data = np.where(x > 30, x, np.log1p(np.exp(np.minimum(x, 30))))

    def bwd(g):
        return (g / (1.0 + np.exp(-x)),)

    return _make("softplus", (a,), data, bwd)


@_op("sin")
def sin(a):
    x = a.data
    data = np.sin(x)

    def bwd(g):
        return (g * np.cos(x),)

    return _make("sin", (a,), data, bwd)


@_op("cos")
def cos(a):
    x = a.data
    data = np.cos(x)

    def bwd(g):
        return (-g * np.sin(x),)

    return _make("cos", (a,), data, bwd)


@_op("sqrt")
def sqrt(a):
    data = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / data,)

    return _make("sqrt", (a,), data, bwd)


@_op("exp")
def exp(a):
    data = np.exp(a.data)

    def bwd(g):
        return (g * data,)

    return _make("exp", (a,), data, bwd)


@_op("log")
def log(a):
    x = a.data
    data = np.log(x)

    def bwd(g):
        return (g / x,)

    return _make("log", (a,), data, bwd)


@_op("clip")
def clip(a, lo, hi):
    x = a.data
    data = np.clip(x, lo, hi)
    mask = (x >= lo) & (x <= hi)

    def bwd(g):
        return (g * mask,)

    return _make("clip", (a,), data, bwd)


@_op("cast")
def cast(a, dtype):
    """Change dtype; the gradient is cast back to the source dtype."""
    src = a.data.dtype
    data = a.data.astype(np.dtype(dtype))

    def bwd(g):
        return (g.astype(src),)

    return _make("cast", (a,), data, bwd)


@_op("softmax")
def softmax(a):
    """Softmax over the last axis."""
    x = a.data
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / np.sum(e, axis=-1, keepdims=True)

    def bwd(g):
        dot = np.sum(g * data, axis=-1, keepdims=True)
        return (data * (g - dot),)

    return _make("softmax", (a,), data, bwd)


# ---------------------------------------------------------------------------
# reductions

def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


@_op("sum")
def sum_(a, axis=None, keepdims=False):
    axes = _axis_tuple(axis, a.ndim)
    data = np.sum(a.data, axis=axes, keepdims=keepdims)
    shape = a.shape

    def bwd(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gk, shape).copy(),)

    return _make("sum", (a,), data, bwd)


@_op("mean")
def mean(a, axis=None, keepdims=False):
    axes = _axis_tuple(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    data = np.mean(a.data, axis=axes, keepdims=keepdims)
    shape = a.shape

    def bwd(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gk, shape).copy() / count,)

    return _make("mean", (a,), data, bwd)


@_op("reduce_max")
def reduce_max(a, axis, keepdims=False):
    """Max over a single axis; gradient goes to the first maximal entry."""
    ax = axis % a.ndim
    arg = np.argmax(a.data, axis=ax)
    data_k = np.take_along_axis(a.data, np.expand_dims(arg, ax), axis=ax)
    data = data_k if keepdims else np.squeeze(data_k, axis=ax)
    shape = a.shape

    def bwd(g):
        gk = g if keepdims else np.expand_dims(g, ax)
        da = np.zeros(shape, dtype=gk.dtype)
        np.put_along_axis(da, np.expand_dims(arg, ax), gk, axis=ax)
        return (da,)

    return _make("reduce_max", (a,), data, bwd)


# ---------------------------------------------------------------------------
# sampling

@_op("bilinear_sample")
def bilinear_sample(img, u, v):
    """Sample ``img`` (C,H,W) at continuous pixel coords ``u``, ``v``.

    Coordinates are clamped to the image before interpolation; the second
    return value is a constant bool mask of samples that were in bounds.
    Corner weighting is evaluated in a fixed order so results are
    bit-reproducible:  v00*(1-wx)*(1-wy) + v01*wx*(1-wy)
                     + v10*(1-wx)*wy    + v11*wx*wy
    with v01 one step in +x and v10 one step in +y.
    """
    if img.ndim != 3:
        raise ShapeError("bilinear_sample", img.shape, detail="expected (C,H,W)")
    if u.shape != v.shape:
        raise ShapeError("bilinear_sample", u.shape, v.shape)
    C, H, W = img.shape
    ud, vd = u.data, v.data
    valid = np.isfinite(ud) & np.isfinite(vd) & (ud >= 0) & (ud <= W - 1) & (vd >= 0) & (vd <= H - 1)
    uc = np.clip(np.nan_to_num(ud, nan=0.0, posinf=0.0, neginf=0.0), 0.0, W - 1)
    vc = np.clip(np.nan_to_num(vd, nan=0.0, posinf=0.0, neginf=0.0), 0.0, H - 1)
    x0 = np.minimum(np.floor(uc).astype(np.int64), W - 2) if W > 1 else np.zeros_like(uc, dtype=np.int64)
    y0 = np.minimum(np.floor(vc).astype(np.int64), H - 2) if H > 1 else np.zeros_like(vc, dtype=np.int64)
    wx = uc - x0
    wy = vc - y0
    im = img.data
    v00 = im[:, y0, x0]
    v01 = im[:, y0, x0 + 1] if W > 1 else v00
    v10 = im[:, y0 + 1, x0] if H > 1 else v00
    v11 = im[:, y0 + 1, x0 + 1] if W > 1 and H > 1 else v00
    data = v00 * (1 - wx) * (1 - wy) + v01 * wx * (1 - wy) + v10 * (1 - wx) * wy + v11 * wx * wy

    in_u = (ud >= 0) & (ud <= W - 1)
    in_v = (vd >= 0) & (vd <= H - 1)

    def bwd(g):
        dimg = None
        if img.requires_grad:
            dimg = np.zeros_like(im)
            w00 = ((1 - wx) * (1 - wy))[None]
            w01 = (wx * (1 - wy))[None]
            w10 = ((1 - wx) * wy)[None]
            w11 = (wx * wy)[None]
            cc = np.arange(C).reshape((C,) + (1,) * ud.ndim)
            np.add.at(dimg, (cc, y0[None], x0[None]), g * w00)
            if W > 1:
                np.add.at(dimg, (cc, y0[None], x0[None] + 1), g * w01)
            if H > 1:
                np.add.at(dimg, (cc, y0[None] + 1, x0[None]), g * w10)
            if W > 1 and H > 1:
                np.add.at(dimg, (cc, y0[None] + 1, x0[None] + 1), g * w11)
        du = dv = None
        if u.requires_grad:
            dval_du = (v01 - v00) * (1 - wy) + (v11 - v10) * wy
            du = np.sum(g * dval_du, axis=0) * in_u
        if v.requires_grad:
            dval_dv = (v10 - v00) * (1 - wx) + (v11 - v01) * wx
            dv = np.sum(g * dval_dv, axis=0) * in_v
        return dimg, du, dv

    out = _make("bilinear_sample", (img, u, v), data, bwd)
    return out, valid


# ---------------------------------------------------------------------------
# losses

@_op("l1")
def l1(pred, target, weight=None):
    """Weighted mean absolute error: sum(w*|p-t|) / max(sum(w), eps)."""
    target = as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise ShapeError("l1", pred.shape, target.shape)
    w = np.ones_like(pred.data) if weight is None else np.asarray(weight, dtype=pred.data.dtype)
    if w.shape != pred.shape:
        raise ShapeError("l1", pred.shape, w.shape, detail="weight shape must match")
    diff = pred.data - target.data
    denom = max(float(np.sum(w)), _EPS)
    data = np.array(np.sum(w * np.abs(diff)) / denom, dtype=pred.data.dtype)

    def bwd(g):
        base = g * w * np.sign(diff) / denom
        dt = -base if target.requires_grad else None
        return base, dt

    return _make("l1", (pred, target), data, bwd)


@_op("cross_entropy")
def cross_entropy(logits, labels, weight=None):
    """Mean CE over positions. ``logits`` (N,C,*S), ``labels`` int (N,*S).

    ``weight`` masks/reweights positions; the mean is over total weight.
    """
    labels = np.asarray(labels)
    if logits.ndim < 2 or labels.shape != logits.shape[:1] + logits.shape[2:]:
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    C = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise DataError(f"cross_entropy: labels out of range [0, {C})")
    x = np.moveaxis(logits.data, 1, -1)  # (N,*S,C)
    z = x - np.max(x, axis=-1, keepdims=True)
    logsumexp = np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    logp = z - logsumexp
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    w = np.ones(labels.shape, dtype=logits.data.dtype) if weight is None else np.asarray(weight, dtype=logits.data.dtype)
    if w.shape != labels.shape:
        raise ShapeError("cross_entropy", labels.shape, w.shape, detail="weight shape must match labels")
    denom = max(float(np.sum(w)), _EPS)
    data = np.array(-np.sum(w * picked) / denom, dtype=logits.data.dtype)

    def bwd(g):
        soft = np.exp(logp)
        onehot = np.zeros_like(soft)
        np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
        dx = (soft - onehot) * w[..., None] * (g / denom)
        return (np.moveaxis(dx, -1, 1),)

    return _make("cross_entropy", (logits,), data, bwd)
