"""Gabor filters: the standard real part and a learnable-shape variant.

The shape parameters k1..k5 reshape the cosine's phase argument; powers of
negative bases are taken sign-preservingly so the kernel stays real and
differentiable. All evaluation functions are generic: they accept plain
floats/arrays or autodiff tensors for the parameters, so kernels can be
built inside a training graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError
from .convops import conv2d_hw, im2col

__all__ = [
    "GaborParams",
    "GaborShapeK",
    "GaborKernel",
    "gabor_real",
    "gabor_comp",
    "make_kernel",
    "conv2d",
    "gabor_layer",
    "default_bank",
]

TWO_PI = 2.0 * np.pi


@dataclass
class GaborParams:
    """Wavelength, orientation, phase, spread, and aspect ratio."""

    lam: float
    theta: float
    psi: float
    sigma: float
    gamma: float

    def validate(self):
        lam, sigma, gamma = (ad._val(v) for v in (self.lam, self.sigma, self.gamma))
        if np.any(lam <= 0) or np.any(sigma <= 0) or np.any(gamma <= 0):
            raise ValueError("lam, sigma and gamma must be positive")


@dataclass
class GaborShapeK:
    """Learnable phase-shape parameters k1..k5."""

    k1: float = 1.0
    k2: float = 1.0
    k3: float = 2.0
    k4: float = 0.0
    k5: float = 1.0

    def validate(self):
        vals = [ad._val(getattr(self, f"k{i}")) for i in range(1, 6)]
        if not all(np.all(np.isfinite(v)) for v in vals):
            raise ValueError("shape parameters must be finite")
        if np.any(ad._val(self.k5) == 0):
            raise ValueError("k5 must be nonzero")


def _rotated(x, y, theta):
    ct, st = ad.cos(theta), ad.sin(theta)
    xr = ad.add(ad.mul(x, ct), ad.mul(y, st))
    yr = ad.add(ad.mul(x, ad.mul(st, -1.0)), ad.mul(y, ct))
    return xr, yr


def _envelope(xr, yr, params):
    g2y2 = ad.mul(ad.power(params.gamma, 2), ad.power(yr, 2))
    quad = ad.add(ad.power(xr, 2), g2y2)
    denom = ad.mul(ad.power(params.sigma, 2), 2.0)
    return ad.exp(ad.mul(ad.div(quad, denom), -1.0))


def gabor_real(x, y, params):
    """Standard real-part Gabor: Gaussian envelope times cosine carrier."""
    xr, yr = _rotated(x, y, params.theta)
    phase = ad.add(ad.div(ad.mul(xr, TWO_PI), params.lam), params.psi)
    return ad.mul(_envelope(xr, yr, params), ad.cos(phase))


def gabor_comp(x, y, params, shape):
    """Shape-adjusted Gabor: the carrier phase runs through k1..k5.

    Phase argument: 2*pi*(k1*x'^k2 + y'^k3 + k4)^k5 / lam + psi, with
    sign-preserving powers throughout.
    """
    xr, yr = _rotated(x, y, params.theta)
    inner = ad.add(
        ad.add(ad.mul(shape.k1, ad.spow(xr, shape.k2)), ad.spow(yr, shape.k3)),
        shape.k4,
    )
    shaped = ad.spow(inner, shape.k5)
    phase = ad.add(ad.div(ad.mul(shaped, TWO_PI), params.lam), params.psi)
    return ad.mul(_envelope(xr, yr, params), ad.cos(phase))


@dataclass
class GaborKernel:
    """Rasterized filter taps plus the parameters that produced them."""

    params: GaborParams
    shape: GaborShapeK
    size: int
    taps: np.ndarray


def make_kernel(size, params, shape=None):
    """Rasterize gabor_comp on a size x size grid centered at the origin."""
    if size < 3 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {size}")
    params.validate()
    if shape is None:
        shape = GaborShapeK()
    shape.validate()
    half = size // 2
    lam = ad._val(params.lam)
    dtype = lam.dtype if isinstance(lam, np.ndarray) else np.float64
    x, y = np.meshgrid(np.arange(size) - half, np.arange(size) - half)
    taps = gabor_comp(x.astype(dtype), y.astype(dtype), params, shape)
    if not np.all(np.isfinite(ad._val(taps))):
        raise NumericError("gabor kernel has non-finite taps (extreme shape parameters)")
    return GaborKernel(params=params, shape=shape, size=size, taps=taps)


def _taps_of(kernel):
    return kernel.taps if isinstance(kernel, GaborKernel) else kernel


def conv2d(image, kernel):
    """Same-size correlation with reflect padding."""
    taps = _taps_of(kernel)
    h, w = ad._val(image).shape
    k = ad._val(taps).shape[0]
    if h < k or w < k:
        raise ValueError(f"image ({h}x{w}) is smaller than the kernel ({k}x{k})")
    return conv2d_hw(image, taps)


def gabor_layer(rgb, filters):
    """Apply each filter to R, G and B and sum the three responses.

    ``rgb`` is (H, W, 3); the result is (H, W, F) with one channel per
    filter. Filters sharing a tap size are applied through one stacked
    matmul per color channel, which is the per-filter correlation computed
    column-wise.
    """
    if not filters:
        raise ValueError("filter list must not be empty")
    v = ad._val(rgb)
    if v.ndim != 3 or v.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {v.shape}")
    h, w = v.shape[:2]

    by_size = {}
    for pos, f in enumerate(filters):
        k = ad._val(_taps_of(f)).shape[0]
        if h < k or w < k:
            raise ValueError(f"image ({h}x{w}) is smaller than kernel {pos} ({k}x{k})")
        by_size.setdefault(k, []).append(pos)

    outputs = [None] * len(filters)
    for k, positions in by_size.items():
        stack = ad.concatenate(
            [ad.reshape(_taps_of(filters[p]), (k * k, 1)) for p in positions], axis=1
        )
        resp = None
        for c in range(3):
            cols, _, _ = im2col(rgb[:, :, c : c + 1], k)
            term = ad.matmul(cols, stack)
            resp = term if resp is None else ad.add(resp, term)
        resp = ad.reshape(resp, (h, w, len(positions)))
        if len(by_size) == 1:
            return resp
        for j, p in enumerate(positions):
            outputs[p] = resp[:, :, j : j + 1]
    return outputs[0] if len(outputs) == 1 else ad.concatenate(outputs, axis=2)


def default_bank(orientations=4, wavelengths=(4.0, 8.0), size=9):
    """Texture-analysis style bank: sigma = 0.56*lam, gamma = 0.5, psi = 0."""
    kernels = []
    for lam in wavelengths:
        for i in range(orientations):
            params = GaborParams(
                lam=float(lam),
                theta=float(i) * np.pi / orientations,
                psi=0.0,
                sigma=0.56 * float(lam),
                gamma=0.5,
            )
            kernels.append(make_kernel(size, params, GaborShapeK()))
    return kernels
