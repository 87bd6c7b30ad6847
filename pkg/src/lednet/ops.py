"""Forward and backward rules for every operation the network needs.

Convolutions are direct cross-correlations implemented with an im2col
gather (stride-tricks view) and tensordot; everything stays in numpy and
is bitwise deterministic for fixed inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import LabelError, ShapeError, Tensor, record


@dataclass(frozen=True)
class ConvParams:
    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3)
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)
    dilation: tuple = (1, 1)
    has_bias: bool = True

    def out_hw(self, h, w):
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        dh, dw = self.dilation
        ho = (h + 2 * ph - dh * (kh - 1) - 1) // sh + 1
        wo = (w + 2 * pw - dw * (kw - 1) - 1) // sw + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"non-positive conv output extent for input {h}x{w}: {ho}x{wo}")
        return ho, wo

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels) + tuple(self.kernel)


def _im2col(xp, kernel, stride, dilation, out_hw):
    kh, kw = kernel
    sh, sw = stride
    dh, dw = dilation
    ho, wo = out_hw
    n, c = xp.shape[:2]
    s = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(s[0], s[1], s[2] * dh, s[3] * dw, s[2] * sh, s[3] * sw),
        writeable=False,
    )
    return view


def conv2d(x, w, b, p: ConvParams):
    """2D cross-correlation with zero padding, stride and dilation."""
    n, cin, h, wdt = x.shape
    if cin != p.in_channels:
        raise ShapeError(f"expected {p.in_channels} input channels, got {cin}")
    if w.shape != p.weight_shape:
        raise ShapeError(f"weight shape {w.shape} != {p.weight_shape}")
    ho, wo = p.out_hw(h, wdt)
    ph, pw = p.padding

    kh, kw = p.kernel
    sh, sw = p.stride
    dh, dw = p.dilation
    cout = p.out_channels

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, p.kernel, p.stride, p.dilation, (ho, wo))
    # materialize once as (n*ho*wo, cin*kh*kw); reused by the backward pass
    colmat = np.ascontiguousarray(cols.transpose(0, 4, 5, 1, 2, 3)).reshape(
        n * ho * wo, cin * kh * kw
    )
    wmat = w.data.reshape(cout, -1)
    out = (colmat @ wmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    if b is not None:
        out += b.data.reshape(1, -1, 1, 1)
    out_t = Tensor(out)

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        gw = (gmat.T @ colmat).reshape(w.shape)
        gcols = (gmat @ wmat).reshape(n, ho, wo, cin, kh, kw)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(kh):
            hi = i * dh
            for j in range(kw):
                wi = j * dw
                gxp[:, :, hi : hi + ho * sh : sh, wi : wi + wo * sw : sw] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, ph : ph + h, pw : pw + wdt] if (ph or pw) else gxp
        if b is not None:
            gb = g.sum(axis=(0, 2, 3))
            return np.ascontiguousarray(gx), gw, gb
        return np.ascontiguousarray(gx), gw

    inputs = (x, w) if b is None else (x, w, b)
    return record(inputs, out_t, backward)


def maxpool2d(x):
    """2x2 max pooling with stride 2; ties route gradient to the first
    element in row-major window order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d needs even extents, got {h}x{w}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = win.reshape(n, c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=-1)
    out = Tensor(np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0])

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gx = gflat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (np.ascontiguousarray(gx.reshape(n, c, h, w)),)

    return record((x,), out, backward)


def global_avg_pool(x):
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True))

    def backward(g):
        return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype, copy=True),)

    return record((x,), out, backward)


def relu(x):
    out = Tensor(np.maximum(x.data, 0))

    def backward(g):
        return (g * (x.data > 0),)

    return record((x,), out, backward)


class RunningStats:
    """Per-channel running mean/variance for batch norm eval mode."""

    def __init__(self, channels, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batchnorm2d(x, gamma, beta, stats, training, eps=1e-3, momentum=0.1):
    """Batch normalization over (N, H, W) per channel.

    Train mode normalizes with batch statistics and updates `stats` in
    place; eval mode normalizes with `stats`.
    """
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    gview = gamma.data.reshape(1, c, 1, 1)
    bview = beta.data.reshape(1, c, 1, 1)

    if training:
        m = n * h * w
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if stats is not None:
            stats.mean = ((1 - momentum) * stats.mean + momentum * mu).astype(stats.mean.dtype)
            stats.var = ((1 - momentum) * stats.var + momentum * var).astype(stats.var.dtype)
        ivstd = 1.0 / np.sqrt(var + eps)
        xc = x.data - mu.reshape(1, c, 1, 1)
        xhat = xc * ivstd.reshape(1, c, 1, 1)
        out = Tensor(xhat * gview + bview)

        def backward(g):
            gg = (g * xhat).sum(axis=(0, 2, 3))
            gb = g.sum(axis=(0, 2, 3))
            gxhat = g * gview
            iv = ivstd.reshape(1, c, 1, 1)
            gx = (
                gxhat
                - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            ) * iv
            return gx.astype(x.dtype, copy=False), gg.astype(gamma.dtype), gb.astype(beta.dtype)

    else:
        ivstd = 1.0 / np.sqrt(stats.var + eps)
        xhat = (x.data - stats.mean.reshape(1, c, 1, 1)) * ivstd.reshape(1, c, 1, 1)
        out = Tensor(xhat * gview + bview)

        def backward(g):
            gg = (g * xhat).sum(axis=(0, 2, 3))
            gb = g.sum(axis=(0, 2, 3))
            gx = g * gview * ivstd.reshape(1, c, 1, 1)
            return gx.astype(x.dtype, copy=False), gg.astype(gamma.dtype), gb.astype(beta.dtype)

    return record((x, gamma, beta), out, backward)


def _bilinear_matrix(out_len, in_len, scale, dtype):
    """(out_len, in_len) interpolation weights for one axis,
    align_corners=false: src = (dst + 0.5) / scale - 0.5, clamped."""
    src = (np.arange(out_len) + 0.5) / scale - 0.5
    src = np.clip(src, 0.0, in_len - 1)
    i0 = np.minimum(np.floor(src).astype(np.int64), in_len - 1)
    i1 = np.minimum(i0 + 1, in_len - 1)
    frac = src - i0
    m = np.zeros((out_len, in_len), dtype=dtype)
    rows = np.arange(out_len)
    m[rows, i0] += 1.0 - frac
    m[rows, i1] += frac
    return m


def upsample_bilinear(x, scale):
    """Bilinear upsampling by an integer factor, align_corners=false.

    Separable: out = My @ x @ Mx^T per channel, which also makes the
    backward pass a pair of matrix products.
    """
    if scale < 1:
        raise ShapeError(f"scale must be >= 1, got {scale}")
    n, c, h, w = x.shape
    ho, wo = h * scale, w * scale
    my = _bilinear_matrix(ho, h, scale, x.dtype)
    mx = _bilinear_matrix(wo, w, scale, x.dtype)
    out_t = Tensor(my @ x.data @ mx.T)

    def backward(g):
        return (my.T @ g @ mx,)

    return record((x,), out_t, backward)


def channel_split(x):
    """Split channels into two contiguous halves."""
    n, c, h, w = x.shape
    if c % 2:
        raise ShapeError(f"channel_split needs even channel count, got {c}")
    half = c // 2
    a = Tensor(np.ascontiguousarray(x.data[:, :half]))
    b = Tensor(np.ascontiguousarray(x.data[:, half:]))
    record((x,), a, lambda g: (np.concatenate([g, np.zeros_like(g)], axis=1),))
    record((x,), b, lambda g: (np.concatenate([np.zeros_like(g), g], axis=1),))
    return a, b


def channel_concat(a, b):
    """Stack channels of `a` then `b`."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat mismatch: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1))

    def backward(g):
        return np.ascontiguousarray(g[:, :ca]), np.ascontiguousarray(g[:, ca:])

    return record((a, b), out, backward)


def shuffle_permutation(channels, groups):
    """Channel permutation from reshape (g, C/g) -> transpose -> flatten."""
    if channels % groups:
        raise ShapeError(f"channels {channels} not divisible by groups {groups}")
    return np.arange(channels).reshape(groups, channels // groups).T.reshape(-1)


def channel_shuffle(x, groups):
    c = x.shape[1]
    perm = shuffle_permutation(c, groups)
    inv = np.argsort(perm)
    out = Tensor(np.ascontiguousarray(x.data[:, perm]))

    def backward(g):
        return (np.ascontiguousarray(g[:, inv]),)

    return record((x,), out, backward)


def softmax_cross_entropy(logits, labels, ignore_index=255):
    """Mean per-pixel cross entropy of softmax(logits) against int labels.

    `labels` is an (N, H, W) integer array; pixels labeled `ignore_index`
    do not contribute.  Raises on out-of-range labels and on a batch with
    no valid pixels.
    """
    n, c, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} != {(n, h, w)}")
    valid = labels != ignore_index
    count = int(valid.sum())
    if count == 0:
        raise LabelError("no valid pixels (all labels ignored)")
    lv = labels[valid]
    if lv.min() < 0 or lv.max() >= c:
        raise LabelError(f"label outside [0, {c}) encountered")

    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(sez)  # (n, c, h, w)

    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(logp, safe[:, None], axis=1)[:, 0]
    loss = -(picked * valid).sum() / count
    out = Tensor(np.array(loss, dtype=logits.dtype))

    def backward(g):
        softmax = ez / sez
        onehot = np.zeros_like(z)
        np.put_along_axis(onehot, safe[:, None], 1.0, axis=1)
        gx = (softmax - onehot) * valid[:, None] / count
        return (gx * g,)

    return record((logits,), out, backward)
