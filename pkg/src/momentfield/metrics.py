"""PSNR and windowed SSIM for [0, 1] images."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

__all__ = ["psnr", "ssim", "MetricReport"]

_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_C1 = 0.01**2
_C2 = 0.03**2


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """10*log10(1/MSE) in dB over all pixels and channels; 99 when equal."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return 99.0
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size=_SSIM_WIN, sigma=_SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _windowed_mean(img, win):
    """Valid-position correlation of a single channel with the window."""
    k = win.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.tensordot(view, win, axes=([2, 3], [0, 1]))


def ssim(a, b):
    """Mean structural similarity: 11x11 Gaussian window, sigma = 1.5.

    Uses the standard stabilizers C1 = 0.01^2, C2 = 0.03^2 and averages
    the per-window index over all valid window positions and channels.
    """
    a, b = _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < _SSIM_WIN:
        raise ValueError(f"images must be at least {_SSIM_WIN} pixels per side")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    win = _gaussian_window()
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx = _windowed_mean(x, win)
        my = _windowed_mean(y, win)
        mxx = _windowed_mean(x * x, win)
        myy = _windowed_mean(y * y, win)
        mxy = _windowed_mean(x * y, win)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        num = (2 * mx * my + _C1) * (2 * cov + _C2)
        den = (mx * mx + my * my + _C1) * (vx + vy + _C2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@dataclass
class MetricReport:
    """Per-image rows plus their aggregate (mean of members)."""

    rows: list = dc_field(default_factory=list)  # (scene, view_id, psnr, ssim)

    def add(self, scene, view_id, psnr_db, ssim_val):
        self.rows.append((scene, view_id, float(psnr_db), float(ssim_val)))

    def aggregate(self):
        if not self.rows:
            raise ValueError("no rows to aggregate")
        p = float(np.mean([r[2] for r in self.rows]))
        s = float(np.mean([r[3] for r in self.rows]))
        return p, s
