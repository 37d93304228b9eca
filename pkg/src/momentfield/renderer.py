"""Ray generation, stratified sampling, and emission-absorption compositing.

The compositor accumulates color as sum_i T_i (1 - exp(-sigma_i delta_i)) c_i
with transmittance T_i = exp(-sum_{j<i} sigma_j delta_j). Rendering is
driven by a pure per-ray function; the image path batches rays and may
fan out over threads (MOMENTS_THREADS).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

__all__ = [
    "Ray",
    "SampleSet",
    "CompositeOut",
    "generate_ray",
    "stratified_samples",
    "composite",
    "render_rays",
    "render_ray",
    "render_image",
]


@dataclass(frozen=True)
class Ray:
    """Origin, unit direction, and [t_near, t_far] integration bounds."""

    o: np.ndarray
    d: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        object.__setattr__(self, "o", np.asarray(self.o, dtype=float))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float))
        if abs(np.linalg.norm(self.d) - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        if not (0 <= self.t_near < self.t_far):
            raise ValueError("need 0 <= t_near < t_far")


@dataclass(frozen=True)
class SampleSet:
    """Strictly increasing sample positions and their forward gaps."""

    t: np.ndarray
    delta: np.ndarray


def generate_ray(cam, px, bounds):
    """Ray from the camera center through the center of pixel (row, col)."""
    row, col = px
    if not (0 <= row < cam.height and 0 <= col < cam.width):
        raise ValueError(f"pixel {px} outside a {cam.height}x{cam.width} image")
    near, far = bounds
    d_cam = np.array([(col + 0.5 - cam.cx) / cam.fx, (row + 0.5 - cam.cy) / cam.fy, 1.0])
    d_world = cam.rotation.T @ d_cam
    d_world = d_world / np.linalg.norm(d_world)
    return Ray(o=cam.center(), d=d_world, t_near=float(near), t_far=float(far))


def _sample_positions(near, far, count, rng=None, batch=None):
    """Midpoints of `count` equal bins, or one uniform draw per bin."""
    if count < 2:
        raise ValueError("need at least 2 samples per ray")
    h = (far - near) / count
    edges = near + h * np.arange(count)
    if rng is None:
        t = edges + 0.5 * h
        if batch is not None:
            t = np.broadcast_to(t, (batch, count)).copy()
    else:
        shape = (count,) if batch is None else (batch, count)
        t = edges + h * rng.uniform(0.0, 1.0, size=shape)
    delta = np.concatenate([np.diff(t, axis=-1), far - t[..., -1:]], axis=-1)
    return t, delta


def stratified_samples(ray, count, rng=None):
    """One sample per equal-width bin; midpoints when rng is None."""
    near, far = (ray.t_near, ray.t_far) if isinstance(ray, Ray) else ray
    t, delta = _sample_positions(near, far, count, rng=rng)
    return SampleSet(t=t, delta=delta)


@dataclass
class CompositeOut:
    """Composited color plus per-sample weights and transmittance."""

    color: object
    weights: object
    transmittance: object


def composite(c, sigma, delta):
    """Emission-absorption quadrature along the sample axis.

    Shapes: c is (..., l, 3), sigma and delta are (..., l). Works on plain
    arrays or tape tensors.
    """
    cv, sv, dv = ad._val(c), ad._val(sigma), ad._val(delta)
    if cv.shape[-2] != sv.shape[-1] or sv.shape[-1] != dv.shape[-1]:
        raise ValueError("sample counts of colors, densities and gaps must agree")
    if np.any(sv < 0):
        raise ValueError("densities must be non-negative")
    if np.any(dv <= 0):
        raise ValueError("gaps must be positive")
    od = ad.mul(sigma, delta)
    excl = ad.sub(ad.cumsum(od, axis=-1), od)
    trans = ad.exp(ad.mul(excl, -1.0))
    absorb = ad.sub(1.0, ad.exp(ad.mul(od, -1.0)))
    weights = ad.mul(trans, absorb)
    wexp = ad.reshape(weights, ad._val(weights).shape + (1,))
    color = ad.sum(ad.mul(wexp, c), axis=-2)
    return CompositeOut(color=color, weights=weights, transmittance=trans)


def render_rays(field_fn, origins, dirs, bounds, count, rng=None):
    """Composite a batch of rays; the workhorse for training and images.

    field_fn maps ((M, 3) points, (M, 3) dirs) -> (rgb (M, 3), sigma (M,)).
    Returns a CompositeOut with color (N, 3).
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = origins.shape[0]
    near, far = bounds
    t, delta = _sample_positions(near, far, count, rng=rng, batch=n)
    pts = origins[:, None, :] + t[:, :, None] * dirs[:, None, :]
    flat_pts = pts.reshape(n * count, 3)
    flat_dirs = np.repeat(dirs, count, axis=0)
    rgb, sigma = field_fn(flat_pts, flat_dirs)
    dtype = ad._val(rgb).dtype
    rgb = ad.reshape(rgb, (n, count, 3))
    sigma = ad.reshape(sigma, (n, count))
    return composite(rgb, sigma, delta.astype(dtype))


def render_ray(field_fn, ray, count, rng=None):
    """Pure single-ray rendering; callers may parallelize over rays."""
    out = render_rays(field_fn, ray.o[None], ray.d[None], (ray.t_near, ray.t_far), count, rng=rng)
    return CompositeOut(
        color=ad._val(out.color)[0],
        weights=ad._val(out.weights)[0],
        transmittance=ad._val(out.transmittance)[0],
    )


def _worker_count():
    raw = os.environ.get("MOMENTS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def render_image(field_fn, cam, bounds, count=128, rng=None):
    """Render every pixel of a camera; returns (image, opacity).

    Deterministic when rng is None (bin midpoints). Row blocks are
    independent; MOMENTS_THREADS > 1 renders them on a thread pool.
    """
    h, w = cam.height, cam.width
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    d_cam = np.stack(
        [(jj + 0.5 - cam.cx) / cam.fx, (ii + 0.5 - cam.cy) / cam.fy, np.ones_like(jj, dtype=float)],
        axis=-1,
    )
    d_world = d_cam.reshape(-1, 3) @ cam.rotation
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.center(), (h * w, 3))

    image = np.empty((h * w, 3), dtype=np.float64)
    opacity = np.empty(h * w, dtype=np.float64)
    block = 4096
    spans = [(s, min(s + block, h * w)) for s in range(0, h * w, block)]

    def run(span):
        lo, hi = span
        local_rng = rng
        with ad.no_grad():
            out = render_rays(field_fn, origins[lo:hi], d_world[lo:hi], bounds, count, rng=local_rng)
        image[lo:hi] = ad._val(out.color)
        opacity[lo:hi] = ad._val(out.weights).sum(axis=-1)

    workers = _worker_count()
    if workers > 1 and rng is None and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)
    return image.reshape(h, w, 3), opacity.reshape(h, w)
