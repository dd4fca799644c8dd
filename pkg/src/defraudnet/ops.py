"""Differentiable operators over :class:`~defraudnet.tensor.Tensor`.

Spatial operators work on ``N×C×H×W`` batches; a ``C×H×W`` input is treated
as a batch of one and returned without the batch axis.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, as_tensor, make_result

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected C×H×W or N×C×H×W input, got shape {x.shape}")
    return x, False


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), bw, "div")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return make_result(out, (x,), lambda g: (g * (out > 0),), "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_result(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    count = x.data.size if axis is None else int(np.prod([shape[a] for a in np.atleast_1d(axis)]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return make_result(np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), bw, "mean")


def concat(inputs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not inputs:
        raise ShapeError("concat needs at least one input")
    ref = inputs[0].shape
    ax = axis % len(ref)
    for t in inputs[1:]:
        if len(t.shape) != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError(f"concat extent mismatch on non-axis dims: {ref} vs {t.shape}")
    if len(inputs) == 1:
        return inputs[0]
    sizes = [t.shape[ax] for t in inputs]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        idx = [slice(None)] * g.ndim
        out = []
        for i in range(len(sizes)):
            idx[ax] = slice(offsets[i], offsets[i + 1])
            out.append(g[tuple(idx)])
        return tuple(out)

    return make_result(np.concatenate([t.data for t in inputs], axis=ax), tuple(inputs), bw, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Inverse of :func:`concat`: slice ``x`` into consecutive pieces along ``axis``."""
    ax = axis % x.ndim
    if int(np.sum(sizes)) != x.shape[ax]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to extent {x.shape[ax]}")
    out = []
    start = 0
    for n in sizes:
        out.append(take(x, ax, start, start + n))
        start += n
    return out


def take(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = axis % x.ndim
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return make_result(x.data[idx], (x,), bw, "take")


# ---------------------------------------------------------------- convolution

def _conv_out(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding (no kernel flip)."""
    xb, squeeze = _batched(x)
    if weight.ndim != 4:
        raise ShapeError(f"conv weight must be C_out×C_in×k×k, got {weight.shape}")
    n, c, h, w = xb.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv input has {c} channels (shape {x.shape}) but weight expects {ci} (shape {weight.shape})")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"kernel {kh}×{kw} larger than padded input {h + 2 * padding}×{w + 2 * padding}")
    if stride < 1 or padding < 0:
        raise ShapeError("stride must be positive and padding non-negative")
    ho, wo = _conv_out(h, kh, stride, padding), _conv_out(w, kw, stride, padding)
    if kh == 1 and kw == 1 and padding == 0:
        fwd, bwd = _conv_1x1(xb.data, weight.data, stride, ho, wo)
    elif c < o:
        fwd, bwd = _conv_im2col(xb.data, weight.data, stride, padding, ho, wo)
    else:
        fwd, bwd = _conv_shift(xb.data, weight.data, stride, padding, ho, wo)
    out = fwd
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1)

    def bw(g):
        gx, gw = bwd(g, xb.requires_grad, weight.requires_grad)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (xb, weight) + ((bias,) if bias is not None else ())
    res = make_result(out, parents, bw, "conv2d")
    return reshape(res, res.shape[1:]) if squeeze else res


def _conv_1x1(xd, wd, stride, ho, wo):
    n, c = xd.shape[:2]
    o = wd.shape[0]
    xs = xd[:, :, ::stride, ::stride] if stride > 1 else xd
    xf = np.ascontiguousarray(xs).reshape(n, c, ho * wo)
    wm = wd.reshape(o, c)
    out = np.matmul(wm, xf).reshape(n, o, ho, wo)

    def bwd(g, need_x, need_w):
        gf = g.reshape(n, o, ho * wo)
        gw = np.matmul(gf, xf.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape) if need_w else None
        gx = None
        if need_x:
            d = np.matmul(wm.T, gf).reshape(n, c, ho, wo)
            if stride > 1:
                gx = np.zeros(xd.shape, dtype=xd.dtype)
                gx[:, :, ::stride, ::stride] = d
            else:
                gx = d
        return gx, gw

    return out, bwd


def _conv_im2col(xd, wd, stride, padding, ho, wo):
    # cheap when the input has few channels (stems, the two-map spatial conv);
    # columns are gathered tap by tap in channel-major order so no transpose is needed
    n, c, h, w = xd.shape
    o, _, kh, kw = wd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(n, c * kh * kw, ho * wo)
    wm = wd.reshape(o, -1)
    out = np.matmul(wm, cols).reshape(n, o, ho, wo)

    def bwd(g, need_x, need_w):
        gf = g.reshape(n, o, ho * wo)
        gw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape) if need_w else None
        gx = None
        if need_x:
            dcols = np.matmul(wm.T, gf).reshape(n, c, kh, kw, ho, wo)
            gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gw

    return out, bwd


def _conv_shift(xd, wd, stride, padding, ho, wo):
    # one matmul against every kernel tap, then shifted adds over the (small)
    # output channel count instead of an input-sized im2col copy
    if stride == 1:
        return _conv_shift_clipped(xd, wd, padding, ho, wo)
    n, c, h, w = xd.shape
    o, _, kh, kw = wd.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    xf = np.ascontiguousarray(xp).reshape(n, c, hp * wp)
    wall = np.ascontiguousarray(wd.transpose(2, 3, 0, 1)).reshape(kh * kw * o, c)
    y = np.matmul(wall, xf).reshape(n, kh, kw, o, hp, wp)
    out = np.zeros((n, o, ho, wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            out += y[:, i, j, :, i:i + stride * ho:stride, j:j + stride * wo:stride]

    def bwd(g, need_x, need_w):
        gs = np.zeros((n, kh, kw, o, hp, wp), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                gs[:, i, j, :, i:i + stride * ho:stride, j:j + stride * wo:stride] = g
        gs = gs.reshape(n, kh * kw * o, hp * wp)
        gw = None
        if need_w:
            gwall = np.matmul(gs, xf.transpose(0, 2, 1)).sum(axis=0)
            gw = gwall.reshape(kh, kw, o, c).transpose(2, 3, 0, 1)
        gx = None
        if need_x:
            gxp = np.matmul(wall.T, gs).reshape(n, c, hp, wp)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gw

    return out, bwd


def _conv_shift_clipped(xd, wd, padding, ho, wo):
    # stride 1: taps read the unpadded grid and each one only touches the
    # output rows/cols whose source pixel lies inside the input
    n, c, h, w = xd.shape
    o, _, kh, kw = wd.shape
    xf = np.ascontiguousarray(xd).reshape(n, c, h * w)
    wall = np.ascontiguousarray(wd.transpose(2, 3, 0, 1)).reshape(kh * kw * o, c)
    y = np.matmul(wall, xf).reshape(n, kh, kw, o, h, w)
    regions = []
    for i in range(kh):
        di = i - padding
        r0, r1 = max(0, -di), min(ho, h - di)
        for j in range(kw):
            dj = j - padding
            c0, c1 = max(0, -dj), min(wo, w - dj)
            if r0 < r1 and c0 < c1:
                regions.append((i, j, slice(r0, r1), slice(c0, c1), slice(r0 + di, r1 + di), slice(c0 + dj, c1 + dj)))
    out = np.zeros((n, o, ho, wo), dtype=xd.dtype)
    for i, j, ro, co, ri, ci in regions:
        out[:, :, ro, co] += y[:, i, j, :, ri, ci]

    def bwd(g, need_x, need_w):
        gs = np.zeros((n, kh, kw, o, h, w), dtype=xd.dtype)
        for i, j, ro, co, ri, ci in regions:
            gs[:, i, j, :, ri, ci] = g[:, :, ro, co]
        gs = gs.reshape(n, kh * kw * o, h * w)
        gw = None
        if need_w:
            gwall = np.matmul(gs, xf.transpose(0, 2, 1)).sum(axis=0)
            gw = gwall.reshape(kh, kw, o, c).transpose(2, 3, 0, 1)
        gx = np.matmul(wall.T, gs).reshape(n, c, h, w) if need_x else None
        return gx, gw

    return out, bwd


# ---------------------------------------------------------------- normalization

class RunningStats:
    """Mutable running mean/variance for one batch-norm layer."""

    __slots__ = ("mean", "var")

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats | None,
    mode: str = "train",
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
    relu: bool = False,
) -> Tensor:
    """Per-channel normalization over batch and spatial axes.

    Train mode uses batch statistics and folds them into ``running`` by
    exponential moving average (unbiased variance); eval mode reads
    ``running`` only. ``relu=True`` applies a rectifier to the output in the
    same node.
    """
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    xb, squeeze = _batched(x)
    n, c, h, w = xb.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm affine params must have shape ({c},), got {gamma.shape} / {beta.shape}")
    xd = xb.data
    shp = (1, c, 1, 1)
    if mode == "train":
        m = n * h * w
        if m < 2:
            raise ShapeError("train-mode batch_norm needs at least two values per channel")
        mu = np.einsum("nchw->c", xd) / m
        xhat = xd - mu.reshape(shp)
        var = np.einsum("nchw,nchw->c", xhat, xhat) / m
        if running is not None:
            running.mean = ((1 - momentum) * running.mean + momentum * mu).astype(running.mean.dtype)
            running.var = ((1 - momentum) * running.var + momentum * var * (m / (m - 1))).astype(running.var.dtype)
    elif mode == "eval":
        if running is None:
            raise ValueError("eval-mode batch_norm needs running statistics")
        mu = running.mean.astype(xd.dtype)
        var = running.var.astype(xd.dtype)
        xhat = xd - mu.reshape(shp)
        m = None
    else:
        raise ValueError(f"unknown batch_norm mode {mode!r}")
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat *= inv.reshape(shp)
    out = xhat * gamma.data.reshape(shp)
    out += beta.data.reshape(shp)
    if relu:
        np.maximum(out, 0, out=out)
    gd = gamma.data

    def bw(g):
        if relu:
            g = g * (out > 0)
        # 4-d einsums: concat backward hands over non-contiguous channel slices
        ggamma = np.einsum("nchw,nchw->c", g, xhat)
        gbeta = np.einsum("nchw->c", g)
        gx = None
        if xb.requires_grad:
            scale = gd * inv
            gx = g * scale.reshape(shp)
            if m is not None:
                gx -= xhat * (scale * ggamma / m).reshape(shp)
                gx -= (scale * gbeta / m).reshape(shp)
        return gx, ggamma, gbeta

    res = make_result(out, (xb, gamma, beta), bw, "batch_norm")
    return reshape(res, res.shape[1:]) if squeeze else res


# ---------------------------------------------------------------- pooling / reductions

def pool2d(x: Tensor, kind: str, window: int, stride: int | None = None) -> Tensor:
    xb, squeeze = _batched(x)
    stride = window if stride is None else stride
    n, c, h, w = xb.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} larger than input {h}×{w}")
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    xd = xb.data
    shape, dtype = xd.shape, xd.dtype
    if kind not in ("avg", "max"):
        raise ValueError(f"unknown pool kind {kind!r}")
    if stride == window:
        out, bw = _pool_tiled(xd, kind, window, ho, wo)
        res = make_result(out, (xb,), bw, f"{kind}_pool2d")
        return reshape(res, res.shape[1:]) if squeeze else res
    win = sliding_window_view(xd, (window, window), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]

    if kind == "avg":
        out = win.mean(axis=(4, 5)).astype(dtype)
        scale = 1.0 / (window * window)

        def bw(g):
            gx = np.zeros(shape, dtype=dtype)
            gs = g * scale
            for i in range(window):
                for j in range(window):
                    gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gs
            return (gx,)

    else:
        flat = win.reshape(n, c, ho, wo, window * window)
        # argmax returns the first maximum in row-major window order
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        def bw(g):
            gx = np.zeros(shape, dtype=dtype)
            di, dj = np.divmod(arg, window)
            rows = np.arange(ho).reshape(1, 1, ho, 1) * stride + di
            cols = np.arange(wo).reshape(1, 1, 1, wo) * stride + dj
            nn_ = np.arange(n).reshape(n, 1, 1, 1)
            cc = np.arange(c).reshape(1, c, 1, 1)
            np.add.at(gx, (nn_, cc, rows, cols), g)
            return (gx,)

    res = make_result(np.ascontiguousarray(out), (xb,), bw, f"{kind}_pool2d")
    return reshape(res, res.shape[1:]) if squeeze else res


def _pool_tiled(xd, kind, k, ho, wo):
    # windows tile the input: view it as (n, c, ho, k, wo, k) blocks and
    # combine the k*k strided slices elementwise
    n, c, h, w = xd.shape
    shape, dtype = xd.shape, xd.dtype
    tiles = xd[:, :, :ho * k, :wo * k].reshape(n, c, ho, k, wo, k)
    taps = [tiles[:, :, :, i, :, j] for i in range(k) for j in range(k)]
    if kind == "avg":
        scale = 1.0 / (k * k)
        out = taps[0].copy()
        for t in taps[1:]:
            out += t
        out *= dtype.type(scale)

        def bw(g):
            gs = (g * scale).astype(dtype)
            gt = np.empty((n, c, ho, k, wo, k), dtype=dtype)
            for i in range(k):
                for j in range(k):
                    gt[:, :, :, i, :, j] = gs
            return (_untile(gt, shape),)

        return out, bw

    out = taps[0].copy()
    for t in taps[1:]:
        np.maximum(out, t, out=out)
    # gradient goes to the first maximum in row-major window order
    taken = np.zeros(out.shape, dtype=bool)
    masks = []
    for t in taps:
        m = (t == out) & ~taken
        taken |= m
        masks.append(m)

    def bw(g):
        gt = np.empty((n, c, ho, k, wo, k), dtype=dtype)
        for idx, m in enumerate(masks):
            np.multiply(g, m, out=gt[:, :, :, idx // k, :, idx % k])
        return (_untile(gt, shape),)

    return out, bw


def _untile(gt, shape):
    n, c, ho, k, wo, _ = gt.shape
    flat = gt.reshape(n, c, ho * k, wo * k)
    if flat.shape == shape:
        return flat
    # ragged edge rows/cols outside every window get no gradient
    gx = np.zeros(shape, dtype=gt.dtype)
    gx[:, :, :ho * k, :wo * k] = flat
    return gx


def _max_reduce(x: Tensor, axis: int, keepdims: bool, op: str) -> Tensor:
    xd = x.data
    arg = xd.argmax(axis=axis)
    out = np.take_along_axis(xd, np.expand_dims(arg, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    shape, dtype = xd.shape, xd.dtype

    def bw(g):
        gx = np.zeros(shape, dtype=dtype)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, np.expand_dims(arg, axis), gk, axis=axis)
        return (gx,)

    return make_result(out, (x,), bw, op)


def reduce_spatial(x: Tensor, kind: str) -> Tensor:
    """Global per-channel pooling: ``C×H×W -> C`` (or ``N×C×H×W -> N×C``)."""
    xb, squeeze = _batched(x)
    n, c = xb.shape[:2]
    flat = reshape(xb, (n, c, -1))
    if kind == "avg":
        res = mean(flat, axis=2)
    elif kind == "max":
        res = _max_reduce(flat, 2, False, "spatial_max")
    else:
        raise ValueError(f"unknown reduction {kind!r}")
    return reshape(res, (c,)) if squeeze else res


def reduce_channels(x: Tensor, kind: str) -> Tensor:
    """Per-position pooling over channels: ``C×H×W -> 1×H×W``."""
    xb, squeeze = _batched(x)
    if kind == "avg":
        res = mean(xb, axis=1, keepdims=True)
    elif kind == "max":
        res = _max_reduce(xb, 1, True, "channel_max")
    else:
        raise ValueError(f"unknown reduction {kind!r}")
    return reshape(res, res.shape[1:]) if squeeze else res


# ---------------------------------------------------------------- dense / loss

def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``W·x + b`` for ``x`` of shape ``D`` or ``N×D``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"fully_connected: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"fully_connected: bias {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = g @ wd if x.requires_grad else None
        if xd.ndim == 1:
            gw = np.outer(g, xd)
            gb = g
        else:
            gw = g.T @ xd
            gb = g.sum(axis=0)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return make_result(out, parents, bw, "fully_connected")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Stabilized cross-entropy for one sample; label 0 = live, 1 = fake."""
    if logits.ndim != 1:
        raise ShapeError(f"expected a 1-D logit vector, got shape {logits.shape}")
    k = logits.shape[0]
    if not isinstance(label, (int, np.integer)) or not 0 <= label < k:
        raise ValueError(f"label {label!r} outside the class range [0, {k})")
    z = logits.data
    zmax = z.max()
    lse = zmax + np.log(np.exp(z - zmax).sum())
    loss = np.asarray(lse - z[label], dtype=z.dtype)
    p = softmax(z)

    def bw(g):
        d = p.copy()
        d[label] -= 1
        return (g * d,)

    return make_result(loss, (logits,), bw, "softmax_cross_entropy")
