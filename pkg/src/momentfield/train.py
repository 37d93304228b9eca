"""Training: the reconstruction loss, Adam, and the ray-batch loop."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, backward
from .renderer import render_rays

__all__ = ["mse_loss", "OptimState", "step", "TrainConfig", "train_loop"]


def mse_loss(pred, gt):
    """Mean over rays of the squared color-space Euclidean error."""
    pv, gv = ad._val(pred), ad._val(gt)
    if pv.shape != gv.shape:
        raise ValueError(f"prediction shape {pv.shape} != target shape {gv.shape}")
    n_rays = pv.shape[0]
    diff = ad.sub(pred, gt)
    return ad.div(ad.sum(ad.mul(diff, diff)), float(n_rays))


@dataclass
class OptimState:
    """Adam with bias correction; moments are allocated per parameter."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = dc_field(default_factory=dict)
    v: dict = dc_field(default_factory=dict)


def step(params, opt, grads=None):
    """One Adam update over a name -> Tensor dict, using .grad by default.

    Non-finite gradients abort with a diagnostic naming the parameter.
    """
    opt.step_count += 1
    t = opt.step_count
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.value)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}' at step {t}")
        if name not in opt.m:
            opt.m[name] = np.zeros_like(p.value)
            opt.v[name] = np.zeros_like(p.value)
        opt.m[name] = opt.beta1 * opt.m[name] + (1.0 - opt.beta1) * g
        opt.v[name] = opt.beta2 * opt.v[name] + (1.0 - opt.beta2) * (g * g)
        m_hat = opt.m[name] / bc1
        v_hat = opt.v[name] / bc2
        p.value = p.value - (opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)).astype(p.value.dtype)


@dataclass
class TrainConfig:
    """Knobs of the ray-batch loop."""

    iterations: int = 5000
    rays_per_batch: int = 512
    samples_per_ray: int = 64
    learning_rate: float = 1e-4
    seed: int = 0
    freeze: tuple = ()
    report_every: int = 0  # 0: silent

    def __post_init__(self):
        if self.rays_per_batch < 1:
            raise ValueError("batch must hold at least one ray")
        if self.iterations < 0:
            raise ValueError("iteration count must be non-negative")


def _all_rays(scene_norm):
    """Per-pixel rays and colors for every view: (T,3) o, d, rgb."""
    origins, dirs, colors = [], [], []
    for cam, img in zip(scene_norm.cameras, scene_norm.images):
        h, w = cam.height, cam.width
        jj, ii = np.meshgrid(np.arange(w), np.arange(h))
        d_cam = np.stack(
            [
                (jj + 0.5 - cam.cx) / cam.fx,
                (ii + 0.5 - cam.cy) / cam.fy,
                np.ones_like(jj, dtype=float),
            ],
            axis=-1,
        ).reshape(-1, 3)
        d_world = d_cam @ cam.rotation
        d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
        origins.append(np.broadcast_to(cam.center(), d_world.shape).copy())
        dirs.append(d_world)
        colors.append(np.asarray(img, dtype=np.float64).reshape(-1, 3))
    return np.concatenate(origins), np.concatenate(dirs), np.concatenate(colors)


def train_loop(scene, model, cfg):
    """Optimize the model on a scene's views; returns the loss trace.

    The scene is normalized internally. Deterministic for a fixed seed:
    ray batches, stratified jitter and updates all draw from one stream.
    """
    if len(scene) < 1:
        raise ValueError("scene has no training images")
    scene_n = scene.normalized() if scene.world_scale != 1.0 else scene
    rng = np.random.default_rng(cfg.seed)
    if cfg.freeze:
        model.freeze(cfg.freeze)
    params = model.trainable()
    opt = OptimState(lr=cfg.learning_rate)
    origins, dirs, colors = _all_rays(scene_n)
    total = origins.shape[0]
    bounds = (scene_n.near, scene_n.far)

    losses = []
    for it in range(cfg.iterations):
        pick = rng.integers(0, total, size=cfg.rays_per_batch)
        out = render_rays(
            model, origins[pick], dirs[pick], bounds, cfg.samples_per_ray, rng=rng
        )
        gt = colors[pick].astype(ad._val(out.color).dtype)
        loss = mse_loss(out.color, gt)
        for p in params.values():
            p.zero_grad()
        backward(loss, params=list(params.values()))
        step(params, opt)
        model.bump_version()
        losses.append(float(ad._val(loss)))
        if cfg.report_every and (it + 1) % cfg.report_every == 0:
            print(f"iter {it + 1:6d}  loss {losses[-1]:.6f}")
    return losses, opt
