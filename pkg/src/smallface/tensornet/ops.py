"""Dense NCHW array ops with hand-written backward passes.

Every forward returns (out, cache); the matching backward consumes the
upstream gradient and the cache. Convolution is im2col + one matmul per
batch; the column matrix is cached for the weight gradient.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _conv_out_size(size: int, k: int, stride: int, pad: int, dilation: int) -> int:
    eff = dilation * (k - 1) + 1
    out = (size + 2 * pad - eff) // stride + 1
    if out <= 0:
        raise ValueError(f"convolution output collapsed: size={size} k={k} "
                         f"stride={stride} pad={pad} dilation={dilation}")
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int,
            h_out: int, w_out: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(n, c, kh, kw, h_out, w_out),
        strides=(sn, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
        writeable=False,
    )
    return view.reshape(n, c * kh * kw, h_out * w_out)


def conv2d_forward(x, w, b, stride=1, pad=0, dilation=1):
    """Cross-correlate x (N,C,H,W) with w (F,C,KH,KW) plus bias b (F,)."""
    n, c, h, wid = x.shape
    f, c2, kh, kw = w.shape
    if c != c2:
        raise ValueError(f"input has {c} channels, kernel expects {c2}")
    h_out = _conv_out_size(h, kh, stride, pad, dilation)
    w_out = _conv_out_size(wid, kw, stride, pad, dilation)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _im2col(xp, kh, kw, stride, dilation, h_out, w_out)  # (N, CKK, L)
    out = np.matmul(w.reshape(f, -1), cols)  # (N, F, L)
    out += b.reshape(1, f, 1)
    out = out.reshape(n, f, h_out, w_out)
    cache = (x.shape, w, stride, pad, dilation, cols, (h_out, w_out))
    return out, cache


def conv2d_backward(dout, cache):
    x_shape, w, stride, pad, dilation, cols, (h_out, w_out) = cache
    n, c, h, wid = x_shape
    f, _, kh, kw = w.shape
    dm = dout.reshape(n, f, h_out * w_out)
    db = dout.sum(axis=(0, 2, 3))
    dw = np.matmul(dm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    dcols = np.matmul(w.reshape(f, -1).T, dm)  # (N, CKK, L)
    dc = dcols.reshape(n, c, kh, kw, h_out, w_out)
    hp, wp = h + 2 * pad, wid + 2 * pad
    dxp = np.zeros((n, c, hp, wp), dtype=dout.dtype)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :,
                u * dilation: u * dilation + (h_out - 1) * stride + 1: stride,
                v * dilation: v * dilation + (w_out - 1) * stride + 1: stride] += dc[:, :, u, v]
    dx = dxp[:, :, pad: pad + h, pad: pad + wid] if pad else dxp
    return dx, dw, db


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, x > 0


def relu_backward(dout, cache):
    return dout * cache


def maxpool2x2_forward(x):
    """2x2/stride-2 max pooling; ties go to the earlier (row-major) element."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=-1)  # first max wins the tie
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def maxpool2x2_backward(dout, cache):
    (n, c, h, w), idx = cache
    dflat = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dflat, idx[..., None], dout[..., None], axis=-1)
    dx = dflat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return dx.reshape(n, c, h, w)


def concat_channels_forward(xs):
    out = np.concatenate(xs, axis=1)
    return out, [x.shape[1] for x in xs]


def concat_channels_backward(dout, cache):
    grads = []
    start = 0
    for width in cache:
        grads.append(dout[:, start:start + width])
        start += width
    return grads


def _upsample2_coeffs(n: int):
    # output pixel i samples input at (i + 0.5)/2 - 0.5, clamped to the border
    src = np.clip((np.arange(2 * n) + 0.5) / 2.0 - 0.5, 0.0, n - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    return i0, i1, 1.0 - frac, frac


def bilinear_upsample_x2_forward(x):
    n, c, h, w = x.shape
    y0, y1, wy0, wy1 = _upsample2_coeffs(h)
    x0, x1, wx0, wx1 = _upsample2_coeffs(w)
    wy0 = wy0.astype(x.dtype)[:, None]
    wy1 = wy1.astype(x.dtype)[:, None]
    wx0 = wx0.astype(x.dtype)
    wx1 = wx1.astype(x.dtype)
    rows = x[:, :, y0, :] * wy0 + x[:, :, y1, :] * wy1        # (N, C, 2H, W)
    out = rows[:, :, :, x0] * wx0 + rows[:, :, :, x1] * wx1   # (N, C, 2H, 2W)
    cache = ((h, w), (y0, y1, wy0, wy1), (x0, x1, wx0, wx1))
    return out, cache


def bilinear_upsample_x2_backward(dout, cache):
    (h, w), (y0, y1, wy0, wy1), (x0, x1, wx0, wx1) = cache
    n, c = dout.shape[:2]
    drows = np.zeros((n, c, 2 * h, w), dtype=dout.dtype)
    np.add.at(drows, (slice(None), slice(None), slice(None), x0), dout * wx0)
    np.add.at(drows, (slice(None), slice(None), slice(None), x1), dout * wx1)
    dx = np.zeros((n, c, h, w), dtype=dout.dtype)
    np.add.at(dx, (slice(None), slice(None), y0, slice(None)), drows * wy0)
    np.add.at(dx, (slice(None), slice(None), y1, slice(None)), drows * wy1)
    return dx
