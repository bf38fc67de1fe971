"""Forward kernels and exact vector-Jacobian products for the op set.

Every op validates shapes, computes the forward value with vectorized
numpy, and registers a closure computing the exact VJP for each parent.
Convolutions are evaluated as k*k shifted tensor contractions over a
zero-padded input: for small kernels this beats an explicit im2col copy
and keeps the backward pass a mirror image of the forward loop.

Convolutions carry no bias term; affine shifts live in the norm layers.
"""

from __future__ import annotations

import functools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, make_op


def _check_nchw(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{op} expects a (n, c, h, w) tensor, got shape {x.shape}")


def _pad_hw(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))


def _out_hw(h: int, w: int, k: int, stride: int, padding: int, op: str) -> tuple:
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ShapeError(
            f"{op}: kernel {k}x{k} stride {stride} padding {padding} "
            f"yields empty output for {h}x{w} input"
        )
    return h_out, w_out


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Standard (or pointwise) 2-D cross-correlation, bias-free.

    weight has shape (c_out, c_in, k, k); output position (n, o, y, x) is
    the inner product of the kernel with the receptive window at
    (y*stride - padding, x*stride - padding).
    """
    _check_nchw(x, "conv2d")
    if weight.data.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d weight must be (c_out, c_in, k, k), got {weight.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride {stride} or padding {padding}")
    n, c_in, h, w = x.shape
    c_out, c_in_w, k, _ = weight.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv2d: input has {c_in} channels but weight expects {c_in_w}")
    h_out, w_out = _out_hw(h, w, k, stride, padding, "conv2d")
    wd = weight.data

    if k == 1 and padding == 0:
        # pointwise fast path: a channel-mixing matmul
        xs = x.data[:, :, ::stride, ::stride]
        out = np.tensordot(wd[:, :, 0, 0], xs, axes=([1], [1])).transpose(1, 0, 2, 3)

        def vjp_pw(g):
            dw = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3])).reshape(weight.shape)
            dxs = np.tensordot(wd[:, :, 0, 0], g, axes=([0], [1])).transpose(1, 0, 2, 3)
            if stride == 1:
                dx = dxs
            else:
                dx = np.zeros_like(x.data)
                dx[:, :, ::stride, ::stride] = dxs
            return dx, dw

        return make_op(np.ascontiguousarray(out), (x, weight), vjp_pw)

    xp = _pad_hw(x.data, padding)
    out = np.zeros((n, c_out, h_out, w_out), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            xs = xp[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride]
            out += np.tensordot(wd[:, :, i, j], xs, axes=([1], [1])).transpose(1, 0, 2, 3)

    def vjp(g):
        dw = np.empty_like(wd)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                sl = np.s_[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride]
                dw[:, :, i, j] = np.tensordot(g, xp[sl], axes=([0, 2, 3], [0, 2, 3]))
                dxp[sl] += np.tensordot(wd[:, :, i, j], g, axes=([0], [1])).transpose(1, 0, 2, 3)
        dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        return dx, dw

    return make_op(out, (x, weight), vjp)


def depthwise_conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel spatial convolution: channel i of the output depends
    only on channel i of the input.  weight has shape (c, 1, k, k)."""
    _check_nchw(x, "depthwise_conv2d")
    if weight.data.ndim != 4 or weight.shape[1] != 1 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"depthwise weight must be (c, 1, k, k), got {weight.shape}")
    n, c, h, w = x.shape
    if weight.shape[0] != c:
        raise ShapeError(f"depthwise_conv2d: input has {c} channels but weight has {weight.shape[0]}")
    k = weight.shape[2]
    h_out, w_out = _out_hw(h, w, k, stride, padding, "depthwise_conv2d")
    wd = weight.data

    xp = _pad_hw(x.data, padding)
    out = np.zeros((n, c, h_out, w_out), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            xs = xp[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride]
            out += xs * wd[:, 0, i, j][None, :, None, None]

    def vjp(g):
        dw = np.empty_like(wd)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                sl = np.s_[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride]
                dw[:, 0, i, j] = (g * xp[sl]).sum(axis=(0, 2, 3))
                dxp[sl] += g * wd[:, 0, i, j][None, :, None, None]
        dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        return dx, dw

    return make_op(out, (x, weight), vjp)


def pool2d(x: Tensor, mode: str, k: int = 2, stride: int = 2) -> Tensor:
    """Windowed max or mean over k*k patches.

    Max-pool gradient routes to the first (row-major) maximal element of
    each window so repeated runs are bit-identical.
    """
    _check_nchw(x, "pool2d")
    if mode not in ("max", "avg"):
        raise ShapeError(f"pool2d mode must be 'max' or 'avg', got {mode!r}")
    n, c, h, w = x.shape
    if k > h or k > w:
        raise ShapeError(f"pool2d: window {k}x{k} larger than input {h}x{w}")
    h_out, w_out = _out_hw(h, w, k, stride, 0, "pool2d")
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, h_out, w_out, k * k)

    if mode == "max":
        arg = flat.argmax(axis=-1)
        out = flat.max(axis=-1)

        def vjp_max(g):
            dx = np.zeros_like(x.data)
            for q in range(k * k):
                i, j = divmod(q, k)
                sl = np.s_[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride]
                dx[sl] += g * (arg == q)
            return (dx,)

        return make_op(np.ascontiguousarray(out), (x,), vjp_max)

    out = flat.mean(axis=-1)
    inv = 1.0 / (k * k)

    def vjp_avg(g):
        gs = g * inv
        dx = np.zeros_like(x.data)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += gs
        return (dx,)

    return make_op(np.ascontiguousarray(out), (x,), vjp_avg)


@functools.lru_cache(maxsize=64)
def _interp_matrix(n_out: int, n_in: int, dtype_name: str) -> np.ndarray:
    """1-D bilinear resampling matrix, sample centers at (i+0.5)*in/out - 0.5."""
    m = np.zeros((n_out, n_in), dtype=np.dtype(dtype_name))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, np.clip(i0, 0, n_in - 1)), 1.0 - frac)
    np.add.at(m, (rows, np.clip(i0 + 1, 0, n_in - 1)), frac)
    return m


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling by an integer factor, align-corners false."""
    _check_nchw(x, "upsample_bilinear")
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return make_op(x.data.copy(), (x,), lambda g: (g,))
    n, c, h, w = x.shape
    mh = _interp_matrix(h * factor, h, x.data.dtype.name)
    mw = _interp_matrix(w * factor, w, x.data.dtype.name)
    out = np.einsum("ay,bx,ncyx->ncab", mh, mw, x.data, optimize=True)

    def vjp(g):
        return (np.einsum("ay,bx,ncab->ncyx", mh, mw, g, optimize=True),)

    return make_op(out, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def vjp(g):
        return (g * (x.data > 0),)

    return make_op(out, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic; output is strictly inside (0, 1)."""
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ed = np.exp(d[~pos])
    out[~pos] = ed / (1.0 + ed)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return make_op(out, (x,), vjp)


def batch_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization with learnable affine.

    Training mode normalizes by batch statistics over (n, h, w) and
    updates the running stats in place (unbiased variance, standard
    running-average convention).  Inference mode uses the running stats.
    """
    _check_nchw(x, "batch_norm")
    c = x.shape[1]
    for name, t in (("scale", scale), ("shift", shift)):
        if t.shape != (c,):
            raise ShapeError(f"batch_norm {name} must have shape ({c},), got {t.shape}")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ShapeError(f"batch_norm running stats must have shape ({c},)")

    axes = (0, 2, 3)
    br = (None, slice(None), None, None)
    if training:
        n_elem = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean[br]) * inv[br]
        unbiased = var * (n_elem / (n_elem - 1)) if n_elem > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)

        def vjp_train(g):
            dscale = (g * xhat).sum(axis=axes)
            dshift = g.sum(axis=axes)
            dxhat = g * scale.data[br]
            s1 = dxhat.sum(axis=axes)
            s2 = (dxhat * xhat).sum(axis=axes)
            dx = (inv[br] / n_elem) * (n_elem * dxhat - s1[br] - xhat * s2[br])
            return dx, dscale, dshift

        out = scale.data[br] * xhat + shift.data[br]
        return make_op(out, (x, scale, shift), vjp_train)

    inv = 1.0 / np.sqrt(running_var.astype(x.data.dtype) + eps)
    xhat = (x.data - running_mean.astype(x.data.dtype)[br]) * inv[br]
    out = scale.data[br] * xhat + shift.data[br]

    def vjp_eval(g):
        dscale = (g * xhat).sum(axis=axes)
        dshift = g.sum(axis=axes)
        dx = g * scale.data[br] * inv[br]
        return dx, dscale, dshift

    return make_op(out, (x, scale, shift), vjp_eval)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _check_nchw(a, "concat")
    _check_nchw(b, "concat")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat needs matching batch and spatial dims, got {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def vjp(g):
        return g[:, :ca], g[:, ca:]

    return make_op(out, (a, b), vjp)


def pad_bottom_right(x: Tensor, ph: int, pw: int) -> Tensor:
    """Zero-pad the bottom and right spatial edges."""
    _check_nchw(x, "pad")
    if ph < 0 or pw < 0:
        raise ShapeError(f"pad amounts must be non-negative, got ({ph}, {pw})")
    if ph == 0 and pw == 0:
        return x
    h, w = x.shape[2], x.shape[3]
    out = np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)))

    def vjp(g):
        return (g[:, :, :h, :w],)

    return make_op(out, (x,), vjp)


def crop_top_left(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left h*w spatial window."""
    _check_nchw(x, "crop")
    if h > x.shape[2] or w > x.shape[3]:
        raise ShapeError(f"crop to ({h}, {w}) exceeds input {x.shape[2:]} spatial size")
    if (h, w) == x.shape[2:]:
        return x
    full_h, full_w = x.shape[2], x.shape[3]
    out = np.ascontiguousarray(x.data[:, :, :h, :w])

    def vjp(g):
        dx = np.zeros((x.shape[0], x.shape[1], full_h, full_w), dtype=g.dtype)
        dx[:, :, :h, :w] = g
        return (dx,)

    return make_op(out, (x,), vjp)
