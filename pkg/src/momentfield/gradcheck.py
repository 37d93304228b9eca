"""Central finite-difference verification of every differentiable piece.

Each check rebuilds a small float64 graph around the current parameter
values, compares the tape gradients against central differences with
h = 1e-4 * max(1, |value|), and reports the worst mixed relative error
|a - fd| / max(1, |a|, |fd|). Linear operations are held to 1e-7, the
rest to 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import backward
from .encoder import ZernikeConvLayer, zernike_conv
from .field import positional_encoding, super_gaussian
from .gabor import GaborParams, GaborShapeK, conv2d, make_kernel
from .model import ModelConfig, build_model
from .encoder import EncoderConfig
from .renderer import composite, render_rays
from .scene import SynthSpec, synth_scene
from .train import mse_loss

__all__ = ["CheckResult", "fd_check", "run_suite", "LINEAR_TOL", "DEFAULT_TOL"]

LINEAR_TOL = 1e-7
DEFAULT_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self):
        return self.max_rel_err < self.tol

    def line(self):
        tag = "pass" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: max rel err {self.max_rel_err:.3e} (tol {self.tol:.0e})"


def fd_check(build, params, max_coords=0, rng=None):
    """Max mixed relative error of tape grads vs central differences.

    ``build`` recomputes the scalar loss from the parameters' current
    values. When ``max_coords`` > 0, at most that many coordinates per
    parameter are probed (seeded choice).
    """
    loss = build()
    for p in params:
        p.zero_grad()
    backward(loss, params=list(params))
    analytic = {id(p): p.grad.copy() for p in params}

    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        a_flat = analytic[id(p)].reshape(-1)
        for i in coords:
            orig = flat[i]
            h = 1e-4 * max(1.0, abs(orig))
            flat[i] = orig + h
            f_plus = float(ad._val(build()))
            flat[i] = orig - h
            f_minus = float(ad._val(build()))
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            a = float(a_flat[i])
            err = abs(a - fd) / max(1.0, abs(a), abs(fd))
            worst = max(worst, err)
    return worst


def _weighted_sum(x, r):
    return ad.sum(ad.mul(x, r))


def check_linear(rng):
    x = ad.parameter(rng.normal(size=(5, 4)))
    w = ad.parameter(rng.normal(size=(4, 3)))
    b = ad.parameter(rng.normal(size=(3,)))
    r = rng.normal(size=(5, 3))
    build = lambda: _weighted_sum(ad.add(ad.matmul(x, w), b), r)
    return CheckResult("linear (matmul + bias)", fd_check(build, [x, w, b]), LINEAR_TOL)


def check_super_gaussian(rng):
    t = ad.parameter(rng.uniform(-2.0, 2.0, size=(40,)))
    s = ad.parameter(np.array(1.3))
    r = rng.normal(size=(40,))
    build = lambda: _weighted_sum(super_gaussian(t, s, 4), r)
    return CheckResult("super_gaussian", fd_check(build, [t, s]), DEFAULT_TOL)


def check_logistic(rng):
    x = ad.parameter(rng.normal(size=(30,)) * 2.0)
    r = rng.normal(size=(30,))
    build = lambda: _weighted_sum(ad.logistic(x), r)
    return CheckResult("logistic", fd_check(build, [x]), DEFAULT_TOL)


def check_softplus(rng):
    x = ad.parameter(rng.normal(size=(30,)) * 2.0)
    r = rng.normal(size=(30,))
    build = lambda: _weighted_sum(ad.softplus(x), r)
    return CheckResult("softplus", fd_check(build, [x]), DEFAULT_TOL)


def check_positional_encoding(rng):
    x = ad.parameter(rng.uniform(-1.5, 1.5, size=(6, 3)))
    r = rng.normal(size=(6, 39))
    build = lambda: _weighted_sum(positional_encoding(x, 6, True), r)
    return CheckResult("positional_encoding", fd_check(build, [x]), DEFAULT_TOL)


def check_composite(rng):
    s_raw = ad.parameter(rng.normal(size=(4, 8)))
    c_raw = ad.parameter(rng.normal(size=(4, 8, 3)))
    delta = rng.uniform(0.05, 0.2, size=(4, 8))
    r = rng.normal(size=(4, 3))

    def build():
        out = composite(ad.logistic(c_raw), ad.softplus(s_raw), delta)
        return _weighted_sum(out.color, r)

    return CheckResult("composite", fd_check(build, [s_raw, c_raw]), DEFAULT_TOL)


def check_zernike_conv(rng):
    mix = ad.parameter(rng.normal(size=(2 * 15, 3)))
    bias = ad.parameter(rng.normal(size=(3,)))
    img = rng.uniform(0.0, 1.0, size=(8, 8, 2))
    r = rng.normal(size=(8, 8, 3))
    layer = ZernikeConvLayer.create(2, mix, bias)

    def build():
        return _weighted_sum(zernike_conv(img, layer), r)

    return CheckResult("zernike_conv mix", fd_check(build, [mix, bias]), LINEAR_TOL)


def check_gabor_params(rng):
    params = GaborParams(
        lam=ad.parameter(np.array(3.7)),
        theta=ad.parameter(np.array(0.3)),
        psi=ad.parameter(np.array(0.2)),
        sigma=ad.parameter(np.array(1.9)),
        gamma=ad.parameter(np.array(0.7)),
    )
    shape = GaborShapeK(
        k1=ad.parameter(np.array(1.1)),
        k2=ad.parameter(np.array(1.0)),
        k3=ad.parameter(np.array(2.0)),
        k4=ad.parameter(np.array(0.1)),
        k5=ad.parameter(np.array(1.0)),
    )
    img = rng.uniform(0.0, 1.0, size=(9, 9))
    r = rng.normal(size=(9, 9))
    tensors = [params.lam, params.theta, params.psi, params.sigma, params.gamma,
               shape.k1, shape.k2, shape.k3, shape.k4, shape.k5]

    def build():
        return _weighted_sum(conv2d(img, make_kernel(7, params, shape)), r)

    return CheckResult("gabor parameters", fd_check(build, tensors), DEFAULT_TOL)


def _tiny_model():
    spec = SynthSpec(n_views=2, size=12, seed=3, gt_samples=96)
    scene, _ = synth_scene(spec)
    scene_n = scene.normalized()
    cfg = ModelConfig(
        feature_dim=4,
        field_width=8,
        field_depth=2,
        f2_depth=2,
        encoder=EncoderConfig(
            feature_dim=4,
            gabor_orientations=2,
            gabor_wavelengths=(4.0,),
            gabor_size=5,
            zernike_depth=1,
            zernike_radius=2,
            trunk_widths=(4, 4, 4, 4),
        ),
    )
    model = build_model(scene_n, cfg, seed=5, dtype=np.float64)
    return scene_n, model


def check_end_to_end(rng):
    scene_n, model = _tiny_model()
    cam = scene_n.cameras[0]
    origins = np.broadcast_to(cam.center(), (3, 3)).copy()
    jitter = rng.uniform(-0.3, 0.3, size=(3, 3))
    dirs = np.array([cam.rotation.T @ np.array([0.05 * j - 0.05, 0.02, 1.0]) for j in range(3)])
    dirs += 0.01 * jitter
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    gt = rng.uniform(0.0, 1.0, size=(3, 3))
    params = model.trainable()

    def build():
        model._cache.clear()
        out = render_rays(model, origins, dirs, (scene_n.near, scene_n.far), 6)
        return mse_loss(out.color, gt)

    worst = fd_check(build, list(params.values()), max_coords=6, rng=np.random.default_rng(11))
    return CheckResult("end-to-end ray loss", worst, DEFAULT_TOL)


def run_suite(verbose=False):
    """Run every gradient check; returns the list of results."""
    rng = np.random.default_rng(42)
    checks = [
        check_linear,
        check_super_gaussian,
        check_logistic,
        check_softplus,
        check_positional_encoding,
        check_composite,
        check_zernike_conv,
        check_gabor_params,
        check_end_to_end,
    ]
    results = []
    for fn in checks:
        res = fn(rng)
        results.append(res)
        if verbose:
            print(res.line())
    return results
