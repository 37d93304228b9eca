"""Index plumbing for differentiable 2-D convolutions and resampling.

Convolutions are expressed as a single flat gather (im2col with the
reflect padding folded into the index map) followed by a matmul, so both
the image and the kernel sides stay differentiable through the tape.
Index maps depend only on shapes and are cached.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad


def _reflect(q, n):
    """Mirror coordinate q (no edge repeat) into [0, n)."""
    if n == 1:
        return np.zeros_like(q)
    period = 2 * (n - 1)
    q = np.abs(q) % period
    return np.where(q >= n, period - q, q)


@lru_cache(maxsize=128)
def _im2col_index(h, w, c, k, stride):
    """Flat gather map (rows x k*k*c) into an (h, w, c) channels-last image.

    Rows enumerate output pixels; columns enumerate (dy, dx, channel)
    taps with reflect padding of (k-1)//2 built into the indices.
    """
    pad = (k - 1) // 2
    ho = (h - 1) // stride + 1
    wo = (w - 1) // stride + 1
    oy = np.arange(ho) * stride
    ox = np.arange(wo) * stride
    dy, dx = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    sy = _reflect(oy[:, None, None, None] + dy[None, None] - pad, h)
    sx = _reflect(ox[None, :, None, None] + dx[None, None] - pad, w)
    base = (sy * w + sx) * c  # (ho, wo, k, k)
    idx = base[..., None] + np.arange(c)
    return idx.reshape(ho * wo, k * k * c), ho, wo


@lru_cache(maxsize=128)
def _im2col_index_depthwise(h, w, c, k):
    """Flat gather map (h*w*c x k*k): per-pixel, per-channel windows."""
    pad = (k - 1) // 2
    dy, dx = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    sy = _reflect(np.arange(h)[:, None, None, None] + dy[None, None] - pad, h)
    sx = _reflect(np.arange(w)[None, :, None, None] + dx[None, None] - pad, w)
    base = (sy * w + sx) * c  # (h, w, k, k)
    idx = base[:, :, None, :, :] + np.arange(c)[None, None, :, None, None]
    return idx.reshape(h * w * c, k * k)


def conv2d_hw(image, taps):
    """Same-size correlation of a single-channel image, reflect padding."""
    h, w = ad._val(image).shape
    k = ad._val(taps).shape[0]
    idx, ho, wo = _im2col_index(h, w, 1, k, 1)
    cols = ad.take(image, idx)
    out = ad.matmul(cols, ad.reshape(taps, (k * k, 1)))
    return ad.reshape(out, (ho, wo))


def im2col(image, k, stride=1):
    """Gathered window columns of a channels-last (h, w, c) image."""
    h, w, c = ad._val(image).shape
    idx, ho, wo = _im2col_index(h, w, c, k, stride)
    return ad.take(image, idx), ho, wo


def conv2d_hwc(image, weight, bias=None, stride=1):
    """Channels-last convolution: weight is (k*k*c_in, c_out)."""
    h, w, c = ad._val(image).shape
    k2c = ad._val(weight).shape[0]
    k = int(round((k2c // c) ** 0.5))
    cols, ho, wo = im2col(image, k, stride)
    out = ad.affine(cols, weight, bias)
    cout = ad._val(weight).shape[1]
    return ad.reshape(out, (ho, wo, cout))


def depthwise_moments(image, kernels):
    """Correlate every channel with a fixed kernel stack.

    ``kernels`` is (count, k, k); the result is (h, w, c*count) with the
    per-channel moment blocks contiguous (channel-major).
    """
    h, w, c = ad._val(image).shape
    count, k, _ = kernels.shape
    idx = _im2col_index_depthwise(h, w, c, k)
    cols = ad.take(image, idx)  # (h*w*c, k*k)
    moms = ad.matmul(cols, kernels.reshape(count, k * k).T)
    return ad.reshape(moms, (h, w, c * count))


@lru_cache(maxsize=128)
def _upsample_map(h_src, w_src, h_dst, w_dst, c):
    """Bilinear gather maps: 4 corner index arrays + their weights."""
    def axis_map(n_src, n_dst):
        pos = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
        pos = np.clip(pos, 0.0, n_src - 1.0)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_src - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis_map(h_src, h_dst)
    x0, x1, fx = axis_map(w_src, w_dst)
    chan = np.arange(c)

    def flat(yi, xi):
        return ((yi[:, None] * w_src + xi[None, :]) * c)[:, :, None] + chan

    idx = [flat(y0, x0), flat(y0, x1), flat(y1, x0), flat(y1, x1)]
    wy0, wx0 = (1.0 - fy)[:, None, None], (1.0 - fx)[None, :, None]
    wy1, wx1 = fy[:, None, None], fx[None, :, None]
    wts = [wy0 * wx0, wy0 * wx1, wy1 * wx0, wy1 * wx1]
    return idx, wts


def upsample_bilinear(image, h_dst, w_dst):
    """Resize a channels-last (h, w, c) image with bilinear weights."""
    h, w, c = ad._val(image).shape
    if (h, w) == (h_dst, w_dst):
        return image
    idx, wts = _upsample_map(h, w, h_dst, w_dst, c)
    dtype = ad._val(image).dtype
    out = None
    for i, wt in zip(idx, wts):
        term = ad.mul(ad.take(image, i), wt.astype(dtype))
        out = term if out is None else ad.add(out, term)
    return out
