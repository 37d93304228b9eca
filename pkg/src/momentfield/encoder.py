"""The moments encoder and pixel-aligned feature machinery.

Pipeline per input image: a bank of shape-adjustable Gabor filters, a
stack of moment-convolution layers built on the 15 disk basis functions,
then a small strided convolutional trunk whose per-stage taps are
bilinearly upsampled back to input resolution and mixed into a per-pixel
feature volume. Also holds the pinhole camera, point projection and
bilinear feature sampling used to condition the field.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from . import convops, gabor, zernike
from .autodiff import NumericError
from .field import super_gaussian

__all__ = [
    "Camera",
    "project",
    "FeatureVolume",
    "sample_bilinear",
    "ZernikeConvLayer",
    "zernike_conv",
    "EncoderConfig",
    "EncoderParams",
    "init_encoder_params",
    "moments_encode",
    "encode_tensor",
]


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics in pixels, world_to_cam = [R | t]."""

    fx: float
    fy: float
    cx: float
    cy: float
    world_to_cam: np.ndarray  # (3, 4)
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "world_to_cam", np.asarray(self.world_to_cam, dtype=float).reshape(3, 4))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        r = self.world_to_cam[:, :3]
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation block is not orthonormal")

    @property
    def rotation(self):
        return self.world_to_cam[:, :3]

    @property
    def translation(self):
        return self.world_to_cam[:, 3]

    def center(self):
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def scaled(self, s):
        """Same camera with world units multiplied by s."""
        w2c = self.world_to_cam.copy()
        w2c[:, 3] *= s
        return Camera(self.fx, self.fy, self.cx, self.cy, w2c, self.width, self.height)


def project(x_world, cam):
    """Project points to continuous pixel coordinates.

    Returns (u, v, depth); depth is camera-frame z, and depth <= 0 flags a
    point behind the camera (the caller decides how to mask).
    """
    x = np.asarray(x_world, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    xc = pts @ cam.rotation.T + cam.translation
    z = xc[:, 2]
    safe_z = np.where(np.abs(z) < 1e-12, np.where(z < 0, -1e-12, 1e-12), z)
    u = cam.fx * xc[:, 0] / safe_z + cam.cx
    v = cam.fy * xc[:, 1] / safe_z + cam.cy
    if single:
        return float(u[0]), float(v[0]), float(z[0])
    return u, v, z


@dataclass(frozen=True)
class FeatureVolume:
    """Per-pixel feature map of shape (H, W, D)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3:
            raise ValueError(f"feature volume must be (H, W, D), got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("feature volume has non-finite entries")
        object.__setattr__(self, "data", d)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def depth(self):
        return self.data.shape[2]


def bilinear_lookup(data, u, v, scale=None):
    """Blend the 4 nearest pixel features; coordinates clamp to the edge.

    ``data`` is (H, W, D) (array or tensor); u, v are arrays of pixel-grid
    coordinates (u along width, v along height). An optional per-point
    ``scale`` multiplies the result (folded into the blend weights).
    Returns (N, D).
    """
    h, w, d = ad._val(data).shape
    u = np.clip(np.asarray(u, dtype=float), 0.0, w - 1.0)
    v = np.clip(np.asarray(v, dtype=float), 0.0, h - 1.0)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (u - x0)[:, None]
    fy = (v - y0)[:, None]
    s = np.asarray(scale, dtype=float)[:, None] if scale is not None else 1.0
    dtype = ad._val(data).dtype
    rows = [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1]
    weights = [
        (s * (1 - fy) * (1 - fx)).astype(dtype),
        (s * (1 - fy) * fx).astype(dtype),
        (s * fy * (1 - fx)).astype(dtype),
        (s * fy * fx).astype(dtype),
    ]
    flat = ad.reshape(data, (h * w, d)) if isinstance(data, ad.Tensor) else ad._val(data).reshape(h * w, d)
    return ad.gather_rows_blend(flat, rows, weights)


def sample_bilinear(vol, u, v):
    """Sample a feature volume at continuous pixel-grid coordinates."""
    data = vol.data if isinstance(vol, FeatureVolume) else vol
    single = np.ndim(u) == 0
    uu = np.atleast_1d(np.asarray(u, dtype=float))
    vv = np.atleast_1d(np.asarray(v, dtype=float))
    out = bilinear_lookup(data, uu, vv)
    out = ad._val(out)
    return out[0] if single else out


@dataclass
class ZernikeConvLayer:
    """Local disk moments followed by a learnable channel mix.

    Equivalent views: per pixel, compute the 15 moments of the window
    around it for every input channel, then apply ``mix`` as a linear map;
    or depthwise-correlate with the 15 fixed moment kernels and run a 1x1
    mixing convolution. The implementation uses the second form.
    """

    window_radius: int
    basis: zernike.ZernikeBasis
    mix: object  # (c_in * count, c_out) array or tensor
    bias: object  # (c_out,)

    @classmethod
    def create(cls, window_radius, mix, bias):
        basis = zernike.build_basis(order_cap=4, grid_size=2 * window_radius + 1)
        return cls(window_radius=window_radius, basis=basis, mix=mix, bias=bias)


def zernike_conv(image, layer):
    """Apply a moment-convolution layer to a channels-last image."""
    v = ad._val(image)
    if v.ndim != 3:
        raise ValueError(f"expected (H, W, C) input, got shape {v.shape}")
    h, w, c_in = v.shape
    count = layer.basis.count
    mix_shape = ad._val(layer.mix).shape
    if mix_shape[0] != c_in * count:
        raise ValueError(
            f"mix expects {mix_shape[0]} moment channels, input provides {c_in * count}"
        )
    kernels = zernike.moment_kernels(layer.basis).astype(v.dtype)
    moms = convops.depthwise_moments(image, kernels)
    flat = ad.reshape(moms, (h * w, c_in * count))
    out = ad.affine(flat, layer.mix, layer.bias)
    return ad.reshape(out, (h, w, mix_shape[1]))


@dataclass(frozen=True)
class EncoderConfig:
    """Shape of the encoder; stage toggles support the ablation runs."""

    feature_dim: int = 64
    gabor_orientations: int = 4
    gabor_wavelengths: tuple = (4.0, 8.0)
    gabor_size: int = 9
    use_gabor: bool = True
    zernike_depth: int = 15
    zernike_radius: int = 3
    use_zernike: bool = True
    trunk_widths: tuple = (16, 32, 64, 64)
    activation: str = "super_gaussian"  # "identity" for linearity tests

    @property
    def gabor_count(self):
        return self.gabor_orientations * len(self.gabor_wavelengths)

    @property
    def zernike_channels(self):
        if self.use_gabor:
            return self.gabor_count
        return 3


@dataclass
class EncoderParams:
    """Learnable tensors of every encoder stage."""

    cfg: EncoderConfig
    gabor_filters: list = dc_field(default_factory=list)  # (GaborParams, GaborShapeK) of tensors
    gabor_gain: float = 1.0
    z_mix: list = dc_field(default_factory=list)
    z_bias: list = dc_field(default_factory=list)
    z_sig: list = dc_field(default_factory=list)
    t_w: list = dc_field(default_factory=list)
    t_b: list = dc_field(default_factory=list)
    t_sig: list = dc_field(default_factory=list)
    head_w: object = None
    head_b: object = None
    gabor_sig: object = None

    def tensors(self):
        out = {}
        for i, (gp, gk) in enumerate(self.gabor_filters):
            for attr in ("lam", "theta", "psi", "sigma", "gamma"):
                out[f"gabor.{i}.{attr}"] = getattr(gp, attr)
            for attr in ("k1", "k2", "k3", "k4", "k5"):
                out[f"gabor.{i}.{attr}"] = getattr(gk, attr)
        if self.gabor_sig is not None:
            out["gabor.sig"] = self.gabor_sig
        for i, (m, b, s) in enumerate(zip(self.z_mix, self.z_bias, self.z_sig)):
            out[f"zernike.{i}.mix"] = m
            out[f"zernike.{i}.bias"] = b
            out[f"zernike.{i}.sig"] = s
        for i, (w, b, s) in enumerate(zip(self.t_w, self.t_b, self.t_sig)):
            out[f"trunk.{i}.w"] = w
            out[f"trunk.{i}.b"] = b
            out[f"trunk.{i}.sig"] = s
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out


def init_encoder_params(rng, cfg=None, dtype=np.float32):
    """Seeded parameters; Gabor filters start at the standard bank."""
    cfg = cfg or EncoderConfig()
    p = EncoderParams(cfg=cfg)

    def par(val, name):
        return ad.parameter(np.asarray(val, dtype=dtype), name=name)

    if cfg.use_gabor:
        bank = gabor.default_bank(cfg.gabor_orientations, cfg.gabor_wavelengths, cfg.gabor_size)
        tap_mass = []
        for i, k in enumerate(bank):
            gp = gabor.GaborParams(
                lam=par(k.params.lam, f"gabor.{i}.lam"),
                theta=par(k.params.theta, f"gabor.{i}.theta"),
                psi=par(k.params.psi, f"gabor.{i}.psi"),
                sigma=par(k.params.sigma, f"gabor.{i}.sigma"),
                gamma=par(k.params.gamma, f"gabor.{i}.gamma"),
            )
            gk = gabor.GaborShapeK(
                k1=par(1.0, f"gabor.{i}.k1"),
                k2=par(1.0, f"gabor.{i}.k2"),
                k3=par(2.0, f"gabor.{i}.k3"),
                k4=par(0.0, f"gabor.{i}.k4"),
                k5=par(1.0, f"gabor.{i}.k5"),
            )
            p.gabor_filters.append((gp, gk))
            tap_mass.append(np.abs(k.taps).sum())
        # fixed normalizer so the summed three-channel responses land in
        # the active range of the bump activation
        p.gabor_gain = float(1.0 / (3.0 * np.mean(tap_mass)))
        p.gabor_sig = par(1.0, "gabor.sig")

    c = cfg.zernike_channels
    if cfg.use_zernike:
        count = 15
        for i in range(cfg.zernike_depth):
            fan = c * count
            p.z_mix.append(par(rng.normal(0.0, 1.6 / np.sqrt(fan), size=(fan, c)), f"zernike.{i}.mix"))
            p.z_bias.append(par(rng.uniform(-0.5, 0.5, size=(c,)), f"zernike.{i}.bias"))
            p.z_sig.append(par(1.0, f"zernike.{i}.sig"))

    c_in = c if (cfg.use_gabor or cfg.use_zernike) else 3
    for i, width in enumerate(cfg.trunk_widths):
        fan = 9 * c_in
        p.t_w.append(par(rng.normal(0.0, 1.6 / np.sqrt(fan), size=(fan, width)), f"trunk.{i}.w"))
        p.t_b.append(par(rng.uniform(-0.5, 0.5, size=(width,)), f"trunk.{i}.b"))
        p.t_sig.append(par(1.0, f"trunk.{i}.sig"))
        c_in = width

    concat_c = int(np.sum(cfg.trunk_widths))
    p.head_w = par(rng.normal(0.0, 1.0 / np.sqrt(concat_c), size=(concat_c, cfg.feature_dim)), "head.w")
    p.head_b = par(np.zeros(cfg.feature_dim), "head.b")
    return p


def _act(x, sig, cfg):
    if cfg.activation == "identity":
        return x
    return super_gaussian(x, sig, 4)


def encode_tensor(image, params):
    """Full encoder forward; returns the (H, W, D) feature map node."""
    cfg = params.cfg
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    for name, t in params.tensors().items():
        if t is not None and not np.all(np.isfinite(ad._val(t))):
            raise NumericError(f"encoder parameter {name} is non-finite")
    h, w = img.shape[:2]
    x = img.astype(ad._val(params.head_w).dtype, copy=False)

    if cfg.use_gabor:
        taps = [
            gabor.make_kernel(cfg.gabor_size, gp, gk).taps for gp, gk in params.gabor_filters
        ]
        x = gabor.gabor_layer(x, taps)
        x = _act(ad.mul(x, params.gabor_gain), params.gabor_sig, cfg)

    if cfg.use_zernike:
        layer_basis = zernike.build_basis(order_cap=4, grid_size=2 * cfg.zernike_radius + 1)
        for mix, bias, sig in zip(params.z_mix, params.z_bias, params.z_sig):
            layer = ZernikeConvLayer(cfg.zernike_radius, layer_basis, mix, bias)
            x = _act(zernike_conv(x, layer), sig, cfg)

    taps = []
    for i, (tw, tb, tsig) in enumerate(zip(params.t_w, params.t_b, params.t_sig)):
        x = convops.conv2d_hwc(x, tw, tb, stride=1 if i == 0 else 2)
        x = _act(x, tsig, cfg)
        taps.append(x)

    ups = [convops.upsample_bilinear(t, h, w) for t in taps]
    cat = ad.concatenate(ups, axis=2)
    flat = ad.reshape(cat, (h * w, ad._val(cat).shape[2]))
    out = ad.affine(flat, params.head_w, params.head_b)
    return ad.reshape(out, (h, w, cfg.feature_dim))


def moments_encode(image, params):
    """Encode an image into a FeatureVolume (no gradients recorded)."""
    with ad.no_grad():
        out = encode_tensor(image, params)
    return FeatureVolume(data=np.asarray(ad._val(out)))
