"""Scene ingestion, the synthetic oracle scene, and scene serialization.

scene.json schema:
  {"near": f, "far": f, "world_scale": f,
   "frames": [{"file": str, "fx": f, "fy": f, "cx": f, "cy": f,
               "world_to_cam": [12 floats, row-major]}]}

Scenes are stored in raw units together with a world_scale that maps the
content into [-1.5, 1.5]^3; ``Scene.normalized()`` applies it. Images are
8-bit PNGs treated as linear [0, 1] RGB.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .encoder import Camera, project
from .renderer import render_image
from .serialization import ensure_dir, read_png, write_png

__all__ = ["Scene", "SynthSpec", "AnalyticSphere", "load_scene", "save_scene", "synth_scene"]


class SceneError(ValueError):
    """Raised when a scene file is missing pieces or breaks an invariant."""


@dataclass(frozen=True)
class Scene:
    """Posed images: cameras, [0, 1] RGB arrays, bounds, normalization."""

    cameras: tuple
    images: tuple
    near: float
    far: float
    world_scale: float

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise SceneError("cameras and images lists must have equal length")
        if not (0 < self.near < self.far):
            raise SceneError("need 0 < near < far")
        if self.world_scale <= 0:
            raise SceneError("world_scale must be positive")

    def __len__(self):
        return len(self.cameras)

    def normalized(self):
        """Scene rescaled so content lies inside [-1.5, 1.5]^3."""
        s = self.world_scale
        return Scene(
            cameras=tuple(c.scaled(s) for c in self.cameras),
            images=self.images,
            near=self.near * s,
            far=self.far * s,
            world_scale=1.0,
        )

    def subset(self, indices):
        return replace(
            self,
            cameras=tuple(self.cameras[i] for i in indices),
            images=tuple(self.images[i] for i in indices),
        )


def _require(frame, key, pos):
    if key not in frame:
        raise SceneError(f"frame {pos}: missing field '{key}'")
    return frame[key]


def load_scene(path):
    """Parse scene.json and the PNGs it references; validates invariants."""
    root = Path(path)
    meta_path = root / "scene.json"
    if not meta_path.exists():
        raise SceneError(f"missing scene.json in {root}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise SceneError(f"malformed scene.json: {e}") from e

    for key in ("near", "far", "world_scale", "frames"):
        if key not in meta:
            raise SceneError(f"scene.json: missing field '{key}'")
    near, far, ws = float(meta["near"]), float(meta["far"]), float(meta["world_scale"])
    if not (0 < near < far):
        raise SceneError(f"invalid bounds: near={near}, far={far}")
    if ws <= 0:
        raise SceneError(f"world_scale must be positive, got {ws}")

    cameras, images = [], []
    for pos, frame in enumerate(meta["frames"]):
        fx = float(_require(frame, "fx", pos))
        fy = float(_require(frame, "fy", pos))
        if fx <= 0:
            raise SceneError(f"frame {pos}: fx must be positive, got {fx}")
        if fy <= 0:
            raise SceneError(f"frame {pos}: fy must be positive, got {fy}")
        cx = float(_require(frame, "cx", pos))
        cy = float(_require(frame, "cy", pos))
        w2c = np.asarray(_require(frame, "world_to_cam", pos), dtype=float)
        if w2c.size != 12:
            raise SceneError(f"frame {pos}: world_to_cam needs 12 floats, got {w2c.size}")
        img_path = root / _require(frame, "file", pos)
        if not img_path.exists():
            raise SceneError(f"frame {pos}: missing image file '{img_path.name}'")
        img = read_png(img_path)
        try:
            cam = Camera(
                fx=fx, fy=fy, cx=cx, cy=cy,
                world_to_cam=w2c.reshape(3, 4),
                width=img.shape[1], height=img.shape[0],
            )
        except ValueError as e:
            raise SceneError(f"frame {pos}: {e}") from e
        cameras.append(cam)
        images.append(img)
    if not cameras:
        raise SceneError("scene has no frames")
    return Scene(cameras=tuple(cameras), images=tuple(images), near=near, far=far, world_scale=ws)


def save_scene(scene, path):
    """Write scene.json plus one PNG per view (view_000.png, ...)."""
    root = ensure_dir(path)
    frames = []
    for i, (cam, img) in enumerate(zip(scene.cameras, scene.images)):
        name = f"view_{i:03d}.png"
        write_png(root / name, img)
        frames.append(
            {
                "file": name,
                "fx": cam.fx,
                "fy": cam.fy,
                "cx": cam.cx,
                "cy": cam.cy,
                "world_to_cam": [float(v) for v in cam.world_to_cam.ravel()],
            }
        )
    meta = {
        "near": scene.near,
        "far": scene.far,
        "world_scale": scene.world_scale,
        "frames": frames,
    }
    (root / "scene.json").write_text(json.dumps(meta, indent=2))
    return root


@dataclass(frozen=True)
class SynthSpec:
    """An emissive sphere in free space imaged from a camera ring."""

    n_views: int = 4
    size: int = 32
    seed: int = 0
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.8
    albedo: tuple = (0.85, 0.35, 0.3)
    sigma: float = 31.25  # sigma * diameter = 50: optically deep core
    distance: float = 3.2
    fov_margin: float = 1.8
    gt_samples: int = 1024

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        if self.n_views < 1:
            raise ValueError("need at least one view")
        if self.distance <= 2 * self.radius:
            raise ValueError("camera ring must lie outside the sphere")


class AnalyticSphere:
    """Closed-form emissive sphere: constant density inside, zero outside."""

    def __init__(self, center, radius, sigma, albedo):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.sigma = float(sigma)
        self.albedo = np.asarray(albedo, dtype=float)

    def __call__(self, pts, dirs):
        pts = np.asarray(pts, dtype=float)
        inside = np.linalg.norm(pts - self.center, axis=-1) <= self.radius
        sigma = np.where(inside, self.sigma, 0.0)
        rgb = np.broadcast_to(self.albedo, pts.shape).copy()
        return rgb, sigma

    def scaled(self, s):
        """The same medium in rescaled units (density scales inversely)."""
        return AnalyticSphere(self.center * s, self.radius * s, self.sigma / s, self.albedo)


def _look_at(position, target, up=(0.0, 0.0, 1.0)):
    z = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    z = z / np.linalg.norm(z)
    up = np.asarray(up, dtype=float)
    if abs(np.dot(z, up)) > 0.99:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    t = -r @ np.asarray(position, dtype=float)
    return np.concatenate([r, t[:, None]], axis=1)


def synth_scene(spec):
    """Build the posed sphere scene plus its analytic field handle.

    Ground-truth images are quadrature renders of the analytic medium at
    ``gt_samples`` midpoint samples per ray. Returns (scene, field).
    """
    rng = np.random.default_rng(spec.seed)
    center = np.asarray(spec.center, dtype=float)
    field = AnalyticSphere(center, spec.radius, spec.sigma, spec.albedo)

    half_fov = spec.fov_margin * np.arcsin(spec.radius / spec.distance)
    f = (spec.size / 2.0) / np.tan(half_fov)
    near = spec.distance - 2.0 * spec.radius
    far = spec.distance + 2.0 * spec.radius
    world_scale = 1.5 / far

    cameras, images = [], []
    for i in range(spec.n_views):
        azimuth = 2.0 * np.pi * i / spec.n_views + rng.uniform(0.0, 0.3)
        elevation = rng.uniform(-0.35, 0.35)
        pos = center + spec.distance * np.array(
            [
                np.cos(azimuth) * np.cos(elevation),
                np.sin(azimuth) * np.cos(elevation),
                np.sin(elevation),
            ]
        )
        cam = Camera(
            fx=f, fy=f, cx=spec.size / 2.0, cy=spec.size / 2.0,
            world_to_cam=_look_at(pos, center),
            width=spec.size, height=spec.size,
        )
        u, v, depth = project(center, cam)
        if not (0 <= u < spec.size and 0 <= v < spec.size and depth > 0):
            raise ValueError("degenerate geometry: sphere center projects outside a view")
        img, _ = render_image(field, cam, (near, far), count=spec.gt_samples)
        cameras.append(cam)
        images.append(img)
    scene = Scene(
        cameras=tuple(cameras),
        images=tuple(images),
        near=float(near),
        far=float(far),
        world_scale=float(world_scale),
    )
    return scene, field
