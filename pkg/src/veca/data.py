"""Synthetic training images and raster loading.

Desk-scale training never downloads a dataset: images are procedurally
generated (colored geometric shapes over a noisy background) from an explicit
stream, so every batch is replayable. User-supplied rasters are accepted as
binary PPM (P6) or .npy arrays; no other codecs. All model inputs are
channel-normalized with the usual ImageNet constants.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import VecaError
from .rng import RngStream

NORM_MEAN = np.array([0.485, 0.456, 0.406])
NORM_STD = np.array([0.229, 0.224, 0.225])


def normalize(images: np.ndarray) -> np.ndarray:
    """Channelwise (x - mean) / std for images shaped [..., 3, H, W] in [0, 1]."""
    mean = NORM_MEAN.reshape(3, 1, 1)
    std = NORM_STD.reshape(3, 1, 1)
    return (images - mean) / std


def synthetic_images(stream: RngStream, batch: int, resolution: int) -> np.ndarray:
    """Generate [batch, 3, R, R] normalized images of shapes on noise.

    Each image gets a random base color, low-amplitude pixel noise, and 1-3
    shapes (axis-aligned rectangles or disks) in random colors. Deterministic
    given the stream state.
    """
    r = resolution
    out = np.empty((batch, 3, r, r))
    yy, xx = np.mgrid[0:r, 0:r]
    for i in range(batch):
        base = stream.uniform(0.1, 0.9, size=3)
        img = base[:, None, None] + stream.normal(0.05, size=(3, r, r))
        n_shapes = int(stream.integers(1, 4))
        for _ in range(n_shapes):
            color = stream.uniform(0.0, 1.0, size=3)
            cx, cy = stream.uniform(0.15, 0.85, size=2) * r
            half = stream.uniform(0.08, 0.3) * r
            if stream.uniform() < 0.5:
                mask = (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= half)
            else:
                mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= half**2
            img[:, mask] = color[:, None]
        out[i] = np.clip(img, 0.0, 1.0)
    return normalize(out)


def load_raster(path: str | Path) -> np.ndarray:
    """Load one image as [3, H, W] floats in [0, 1] from .npy or binary PPM."""
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
        if arr.ndim == 3 and arr.shape[-1] == 3 and arr.shape[0] != 3:
            arr = arr.transpose(2, 0, 1)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise VecaError(f"{path}: expected [3,H,W] or [H,W,3], got {arr.shape}")
        arr = arr.astype(np.float64)
        if arr.max() > 1.5:
            arr = arr / 255.0
        return np.clip(arr, 0.0, 1.0)
    if path.suffix in (".ppm", ".pnm"):
        return _read_ppm(path)
    raise VecaError(f"{path}: unsupported raster format (use .npy or binary .ppm)")


def _read_ppm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P6":
        raise VecaError(f"{path}: only binary P6 PPM is supported")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height * 3, offset=pos)
    img = pixels.reshape(height, width, 3).transpose(2, 0, 1).astype(np.float64)
    return img / maxval
