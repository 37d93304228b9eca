"""File formats: feature volumes, checkpoints, raw images, PNG, CSV.

Binary layouts (all little-endian):
  feature volume  "MFV1" | u32 H, W, D | f32 data, row-major
  checkpoint      "MFP1" | u32 count | blocks of
                  u32 name_len | name bytes | u32 rank | u32 dims... | f32 data
  raw image       "MIMG" | u32 H, W, C | f32 data, row-major
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC_VOLUME = b"MFV1"
MAGIC_CHECKPOINT = b"MFP1"
MAGIC_IMAGE = b"MIMG"


def write_feature_volume(path, data):
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 3:
        raise ValueError("feature volume must be (H, W, D)")
    with open(path, "wb") as fh:
        fh.write(MAGIC_VOLUME)
        fh.write(struct.pack("<III", *data.shape))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_feature_volume(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC_VOLUME:
            raise ValueError(f"not a feature volume file (magic {magic!r})")
        h, w, d = struct.unpack("<III", fh.read(12))
        buf = fh.read(4 * h * w * d)
    return np.frombuffer(buf, dtype="<f4").reshape(h, w, d).copy()


def write_checkpoint(path, tensors):
    """Write named float32 arrays; dict order is preserved."""
    with open(path, "wb") as fh:
        fh.write(MAGIC_CHECKPOINT)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def read_checkpoint(path):
    out = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC_CHECKPOINT:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            buf = fh.read(4 * n)
            out[name] = np.frombuffer(buf, dtype="<f4").reshape(dims).copy()
    return out


def write_raw_image(path, data):
    data = np.asarray(data, dtype="<f4")
    if data.ndim == 2:
        data = data[:, :, None]
    with open(path, "wb") as fh:
        fh.write(MAGIC_IMAGE)
        fh.write(struct.pack("<III", *data.shape))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_raw_image(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC_IMAGE:
            raise ValueError(f"not a raw image file (magic {magic!r})")
        h, w, c = struct.unpack("<III", fh.read(12))
        buf = fh.read(4 * h * w * c)
    return np.frombuffer(buf, dtype="<f4").reshape(h, w, c).copy()


def write_png(path, image):
    """Save a [0, 1] float image (or [0, 255] uint8) as 8-bit PNG."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def read_png(path):
    """Load a PNG as float RGB in [0, 1]."""
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def write_png_normalized(path, data):
    """Map data affinely to [0, 255]; returns the (min, max) used."""
    arr = np.asarray(data, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip(np.round((arr - lo) / span * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(scaled).save(path)
    return lo, hi


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    return rows[0], rows[1:]


def ensure_dir(path):
    Path(path).mkdir(parents=True, exist_ok=True)
    return Path(path)
