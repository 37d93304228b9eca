"""Pixel-aligned conditioning: wires encoder feature volumes to the field.

A ConditionedField owns the field and encoder parameters plus the input
views (already normalized). Called on a batch of world points and
directions it projects into every input view, bilinearly samples that
view's feature volume, and evaluates the per-view network with average
pooling. Feature volumes are cached per (view, parameter-version).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, bilinear_lookup, encode_tensor, init_encoder_params
from .field import field_apply, init_field_params
from .serialization import read_checkpoint, write_checkpoint

__all__ = ["ModelConfig", "ConditionedField", "build_model", "save_model", "load_model"]

PARAM_GROUPS = ("field", "gabor", "zernike", "trunk")


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to rebuild the model skeleton."""

    feature_dim: int = 64
    field_width: int = 128
    field_depth: int = 3
    f2_depth: int = 2
    num_freqs: int = 6
    encode_dirs: bool = False
    encoder: EncoderConfig = dc_field(default_factory=EncoderConfig)

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        enc = raw.pop("encoder")
        enc["gabor_wavelengths"] = tuple(enc["gabor_wavelengths"])
        enc["trunk_widths"] = tuple(enc["trunk_widths"])
        return cls(encoder=EncoderConfig(**enc), **raw)


class ConditionedField:
    """Field conditioned on the feature volumes of the input views."""

    def __init__(self, field_params, encoder_params, cameras, images, condition_grad=True):
        if len(cameras) != len(images):
            raise ValueError("need one image per camera")
        self.field_params = field_params
        self.encoder_params = encoder_params
        self.cameras = list(cameras)
        self.images = [np.asarray(img, dtype=np.float64) for img in images]
        self.condition_grad = condition_grad
        self.dtype = ad._val(field_params.f2_w[-1]).dtype
        self.version = 0
        self.encode_count = 0
        self._cache = {}
        self._rot = [c.rotation.astype(np.float64) for c in cameras]
        self._trans = [c.translation.astype(np.float64) for c in cameras]

    # -- parameters --------------------------------------------------------

    def tensors(self):
        out = {}
        for name, t in self.field_params.tensors().items():
            out[f"field.{name}"] = t
        for name, t in self.encoder_params.tensors().items():
            out[f"enc.{name}"] = t
        return out

    def trainable(self):
        return {k: t for k, t in self.tensors().items() if t.requires_grad}

    def freeze(self, groups):
        """Stop gradient flow for parameter groups (see PARAM_GROUPS)."""
        for g in groups:
            if g not in PARAM_GROUPS:
                raise ValueError(f"unknown parameter group '{g}'")
        for name, t in self.tensors().items():
            if name.startswith("field.") and "field" in groups:
                t.requires_grad = False
            if name.startswith("enc.gabor.") and "gabor" in groups:
                t.requires_grad = False
            if name.startswith("enc.zernike.") and "zernike" in groups:
                t.requires_grad = False
            if name.startswith(("enc.trunk.", "enc.head.")) and "trunk" in groups:
                t.requires_grad = False

    def bump_version(self):
        self.version += 1

    @property
    def encoder_frozen(self):
        return not any(
            t.requires_grad
            for name, t in self.tensors().items()
            if name.startswith("enc.")
        )

    # -- encoding ----------------------------------------------------------

    def encode_view(self, i):
        """Feature volume of view i, cached until the parameters change."""
        key = "frozen" if self.encoder_frozen else self.version
        hit = self._cache.get(i)
        if hit is not None and hit[0] == key:
            return hit[1]
        vol = encode_tensor(self.images[i], self.encoder_params)
        if not self.condition_grad and isinstance(vol, ad.Tensor):
            vol = vol.detach()
        self.encode_count += 1
        self._cache[i] = (key, vol)
        return vol

    # -- field evaluation ----------------------------------------------------

    def __call__(self, pts, dirs):
        """(M, 3) world points and unit dirs -> (rgb (M, 3), sigma (M,))."""
        pts = np.asarray(pts, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
        m = pts.shape[0]
        n_views = len(self.cameras)
        x_view = np.empty((n_views, m, 3), dtype=self.dtype)
        d_view = np.empty((n_views, m, 3), dtype=self.dtype)
        feats = []
        for i, cam in enumerate(self.cameras):
            xv = pts @ self._rot[i].T + self._trans[i]
            dv = dirs @ self._rot[i].T
            x_view[i] = xv
            d_view[i] = dv
            z = xv[:, 2]
            safe_z = np.where(np.abs(z) < 1e-9, 1e-9, z)
            u = cam.fx * xv[:, 0] / safe_z + cam.cx
            v = cam.fy * xv[:, 1] / safe_z + cam.cy
            vol = self.encode_view(i)
            # continuous pixel coords -> feature grid coords (centers at ints);
            # points behind the camera contribute zero features
            in_front = (z > 1e-9).astype(np.float64)
            feats.append(bilinear_lookup(vol, u - 0.5, v - 0.5, scale=in_front))
        stacked = ad.concatenate(feats, axis=0)
        return field_apply(self.field_params, x_view, d_view, stacked)


def build_model(scene_norm, cfg=None, seed=0, condition_grad=True, dtype=np.float32):
    """Seeded model over a normalized scene's views."""
    cfg = cfg or ModelConfig()
    rng = np.random.default_rng(seed)
    enc = init_encoder_params(rng, cfg.encoder, dtype=dtype)
    fld = init_field_params(
        rng,
        feature_dim=cfg.feature_dim,
        width=cfg.field_width,
        depth=cfg.field_depth,
        f2_depth=cfg.f2_depth,
        num_freqs=cfg.num_freqs,
        encode_dirs=cfg.encode_dirs,
        dtype=dtype,
    )
    return ConditionedField(fld, enc, scene_norm.cameras, scene_norm.images, condition_grad)


def save_model(path, model, optimizer=None, cfg=None):
    """Checkpoint parameters (and optimizer state) plus a config sidecar."""
    tensors = {name: t.value for name, t in model.tensors().items()}
    if optimizer is not None:
        for name, m in optimizer.m.items():
            tensors[f"adam.m.{name}"] = m
        for name, v in optimizer.v.items():
            tensors[f"adam.v.{name}"] = v
        tensors["adam.step"] = np.array([optimizer.step_count], dtype=np.float32)
    write_checkpoint(path, tensors)
    if cfg is not None:
        Path(path).with_suffix(".json").write_text(cfg.to_json())


def load_model(path, scene_norm, cfg=None, condition_grad=True):
    """Rebuild a model and load checkpointed values into it."""
    if cfg is None:
        sidecar = Path(path).with_suffix(".json")
        if not sidecar.exists():
            raise FileNotFoundError(f"no model config given and {sidecar} not found")
        cfg = ModelConfig.from_json(sidecar.read_text())
    model = build_model(scene_norm, cfg, seed=0, condition_grad=condition_grad)
    stored = read_checkpoint(path)
    for name, t in model.tensors().items():
        if name not in stored:
            raise KeyError(f"checkpoint is missing tensor '{name}'")
        if stored[name].shape != t.value.shape:
            raise ValueError(
                f"checkpoint tensor '{name}' has shape {stored[name].shape}, "
                f"model expects {t.value.shape}"
            )
        t.value = stored[name].astype(t.value.dtype)
    return model, cfg, stored
