"""The conditioned radiance field.

A per-view network maps encoded view-space position, view direction and a
pixel-aligned feature vector to an intermediate vector; the per-view
vectors are average-pooled and a final network produces color and
density. Activations are Super-Gaussian bumps with a learnable spread per
layer; color is squashed with a logistic, density with a softplus.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad

__all__ = [
    "PositionalEncoding",
    "positional_encoding",
    "pe_dim",
    "super_gaussian",
    "FieldParams",
    "FieldQuery",
    "init_field_params",
    "field_apply",
    "field_query",
]


@dataclass(frozen=True)
class PositionalEncoding:
    """Sin/cos expansion at frequencies 1, 2, ..., 2^(L-1) (no pi factor)."""

    num_freqs: int = 6
    include_raw: bool = True

    def __post_init__(self):
        if self.num_freqs < 1:
            raise ValueError("need at least one frequency")


def positional_encoding(p, num_freqs=6, include_raw=True):
    """Encode the last axis: [sin(2^j p), cos(2^j p)]_j, then raw p.

    A scalar input is treated as a length-1 vector; per input scalar the
    output holds 2*num_freqs values (plus one when the raw value is
    appended).
    """
    raw = ad._val(p)
    scalar_in = raw.ndim == 0
    if scalar_in:
        p = ad.reshape(p, (1,)) if isinstance(p, ad.Tensor) else raw.reshape(1)
    parts = []
    for j in range(num_freqs):
        scaled = ad.mul(p, float(2.0**j))
        parts.append(ad.sin(scaled))
        parts.append(ad.cos(scaled))
    if include_raw:
        parts.append(p)
    return ad.concatenate(parts, axis=-1)


def pe_dim(k, num_freqs=6, include_raw=True):
    """Encoded width of a k-vector."""
    return k * (2 * num_freqs + (1 if include_raw else 0))


@dataclass(frozen=True)
class SuperGaussian:
    """Bump activation exp(-(t/spread)^(2p)); p=4 gives heavy kurtosis."""

    spread: float = 1.0
    p: int = 4

    def __post_init__(self):
        if ad._val(self.spread) <= 0:
            raise ValueError("spread must be positive")
        if self.p < 1:
            raise ValueError("kurtosis degree must be >= 1")


def super_gaussian(t, spread=1.0, p=4):
    """exp(-(t/spread)^(2p)): even in t, maximal (1) at t = 0."""
    if np.any(ad._val(spread) <= 0):
        raise ValueError("spread must be positive")
    return ad.sgauss(t, spread, int(p))


@dataclass
class FieldParams:
    """Weights of the per-view (f1) and pooled (f2) stages.

    f1 blocks inject a linear map of the conditioning feature into every
    pre-activation; each activation site carries its own learnable spread.
    """

    pe: PositionalEncoding
    encode_dirs: bool
    feature_dim: int
    width: int
    f1_w: list = dc_field(default_factory=list)
    f1_b: list = dc_field(default_factory=list)
    f1_fw: list = dc_field(default_factory=list)
    f1_sig: list = dc_field(default_factory=list)
    f2_w: list = dc_field(default_factory=list)
    f2_b: list = dc_field(default_factory=list)
    f2_sig: list = dc_field(default_factory=list)
    sg_p: int = 4

    @property
    def in_dim(self):
        d = pe_dim(3, self.pe.num_freqs, self.pe.include_raw)
        d += pe_dim(3, self.pe.num_freqs, self.pe.include_raw) if self.encode_dirs else 3
        return d

    def tensors(self):
        out = {}
        for i, (w, b, fw, s) in enumerate(zip(self.f1_w, self.f1_b, self.f1_fw, self.f1_sig)):
            out[f"f1.{i}.w"] = w
            out[f"f1.{i}.b"] = b
            out[f"f1.{i}.fw"] = fw
            out[f"f1.{i}.sig"] = s
        for i, (w, b) in enumerate(zip(self.f2_w, self.f2_b)):
            out[f"f2.{i}.w"] = w
            out[f"f2.{i}.b"] = b
        for i, s in enumerate(self.f2_sig):
            out[f"f2.{i}.sig"] = s
        return out


def init_field_params(
    rng,
    feature_dim=64,
    width=128,
    depth=3,
    f2_depth=2,
    num_freqs=6,
    include_raw=True,
    encode_dirs=False,
    dtype=np.float32,
):
    """Seeded initialization; biases are spread so the bump activations
    start off-center and pass gradient."""
    pe = PositionalEncoding(num_freqs=num_freqs, include_raw=include_raw)
    p = FieldParams(pe=pe, encode_dirs=encode_dirs, feature_dim=feature_dim, width=width)

    def lin(fan_in, fan_out, name, gain=1.0):
        w = rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, fan_out))
        return ad.parameter(w.astype(dtype), name=name)

    def bias(fan_out, name, spread=0.5):
        b = rng.uniform(-spread, spread, size=(fan_out,))
        return ad.parameter(b.astype(dtype), name=name)

    d_in = p.in_dim
    for i in range(depth):
        fan = d_in if i == 0 else width
        p.f1_w.append(lin(fan, width, f"f1.{i}.w", gain=1.6))
        p.f1_b.append(bias(width, f"f1.{i}.b"))
        p.f1_fw.append(lin(feature_dim, width, f"f1.{i}.fw"))
        p.f1_sig.append(ad.parameter(np.ones((), dtype=dtype), name=f"f1.{i}.sig"))
    for j in range(f2_depth - 1):
        p.f2_w.append(lin(width, width, f"f2.{j}.w", gain=1.6))
        p.f2_b.append(bias(width, f"f2.{j}.b"))
        p.f2_sig.append(ad.parameter(np.ones((), dtype=dtype), name=f"f2.{j}.sig"))
    p.f2_w.append(lin(width, 4, f"f2.{f2_depth - 1}.w"))
    p.f2_b.append(ad.parameter(np.zeros((4,), dtype=dtype), name=f"f2.{f2_depth - 1}.b"))
    return p


def field_apply(params, x_view, d_view, feats):
    """Evaluate the field for a batch of points seen from V input views.

    x_view, d_view: (V, N, 3) view-space positions/directions (constants).
    feats: (V*N, feature_dim) pixel-aligned features, view-major.
    Returns (rgb (N, 3) in [0,1], sigma (N,) >= 0).
    """
    v, n = x_view.shape[:2]
    dtype = ad._val(feats).dtype
    x_flat = np.ascontiguousarray(x_view.reshape(v * n, 3), dtype=dtype)
    d_flat = np.ascontiguousarray(d_view.reshape(v * n, 3), dtype=dtype)
    pe = params.pe
    base = positional_encoding(x_flat, pe.num_freqs, pe.include_raw)
    dd = positional_encoding(d_flat, pe.num_freqs, pe.include_raw) if params.encode_dirs else d_flat
    base = np.concatenate([base, dd], axis=-1)

    h = base
    for w, b, fw, sig in zip(params.f1_w, params.f1_b, params.f1_fw, params.f1_sig):
        pre = ad.affine(h, w, b, feats, fw)
        h = super_gaussian(pre, sig, params.sg_p)

    pooled = ad.mean(ad.reshape(h, (v, n, params.width)), axis=0)
    g = pooled
    for j, (w, b) in enumerate(zip(params.f2_w[:-1], params.f2_b[:-1])):
        g = super_gaussian(ad.affine(g, w, b), params.f2_sig[j], params.sg_p)
    out = ad.affine(g, params.f2_w[-1], params.f2_b[-1])

    sigma = ad.softplus(out[:, 0])
    rgb = ad.logistic(out[:, 1:4])
    return rgb, sigma


@dataclass
class FieldQuery:
    """One query point with its per-view conditioning entries."""

    x: np.ndarray
    d: np.ndarray
    per_view: list  # of (x_view (3,), d_view (3,), feature (feature_dim,))

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        if abs(np.linalg.norm(self.d) - 1.0) > 1e-6:
            raise ValueError("view direction must be unit length")
        if not self.per_view:
            raise ValueError("query needs at least one view entry")


def field_query(q, params):
    """Single-point evaluation: (color in [0,1]^3, density >= 0)."""
    if not q.per_view:
        raise ValueError("query needs at least one view entry")
    xv = np.stack([np.asarray(e[0], dtype=float) for e in q.per_view])[:, None, :]
    dv = np.stack([np.asarray(e[1], dtype=float) for e in q.per_view])[:, None, :]
    feats = np.stack([np.asarray(e[2], dtype=float) for e in q.per_view])
    rgb, sigma = field_apply(params, xv, dv, feats)
    return np.asarray(ad._val(rgb))[0], float(ad._val(sigma)[0])
