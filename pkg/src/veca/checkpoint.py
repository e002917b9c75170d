"""Binary checkpoint container: JSON config plus named raw tensors.

Layout (all integers little-endian):

    magic   4 bytes  b"VECA"
    version u32      container version (currently 1)
    cfg_len u32      length of the UTF-8 JSON config blob
    config  bytes    JSON object (model config, rope base, seeds, ...)
    count   u32      number of tensors
    per tensor:
        name_len u32, name UTF-8 bytes
        rank     u32, extents rank x u64
        dtype    u8   (0 = float32, 1 = float64)
        payload  raw little-endian scalars, row-major

Round-trips are bitwise lossless for both dtypes. Unknown versions and bad
magic raise explicit errors. Big-endian hosts byte-swap on load and save so
the on-disk format stays canonical.
"""

from __future__ import annotations

import json
import struct
import sys
from pathlib import Path

import numpy as np

from .errors import CheckpointError, UnsupportedVersionError

MAGIC = b"VECA"
VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_container(path: str | Path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write config and tensors; tensor dict order is preserved."""
    chunks: list[bytes] = [MAGIC, struct.pack("<I", VERSION)]
    blob = json.dumps(config, sort_keys=True).encode()
    chunks.append(struct.pack("<I", len(blob)))
    chunks.append(blob)
    chunks.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAG_FOR:
            raise CheckpointError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        encoded = name.encode()
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(struct.pack("<B", _TAG_FOR[arr.dtype]))
        payload = np.ascontiguousarray(arr)
        if sys.byteorder == "big":  # pragma: no cover
            payload = payload.byteswap()
        chunks.append(payload.tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, raw: bytes, path: str):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated container")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def load_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container back; inverse of :func:`save_container`."""
    r = _Reader(Path(path).read_bytes(), str(path))
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a checkpoint container")
    version = r.u32()
    if version != VERSION:
        raise UnsupportedVersionError(
            f"{path}: container version {version} unsupported (this build reads {VERSION})"
        )
    config = json.loads(r.take(r.u32()).decode())
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        rank = r.u32()
        shape = struct.unpack(f"<{rank}Q", r.take(8 * rank)) if rank else ()
        tag = r.u8()
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype tag {tag}")
        dt = _DTYPE_TAGS[tag]
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(shape)
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    if r.pos != len(r.raw):
        raise CheckpointError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    return config, tensors


def save_model(path: str | Path, encoder, extra_config: dict | None = None) -> None:
    """Serialize an encoder's config and every parameter tensor."""
    from dataclasses import asdict

    config = {
        "model": asdict(encoder.config),
        "seed": encoder.seed,
        "dtype": np.dtype(encoder.dtype).name,
    }
    if extra_config:
        config.update(extra_config)
    save_container(path, config, encoder.state())


def load_model(path: str | Path):
    """Rebuild an encoder from a checkpoint written by :func:`save_model`."""
    from .model import Encoder, ModelConfig

    config, tensors = load_container(path)
    model_cfg = dict(config["model"])
    model_cfg["budgets"] = tuple(model_cfg["budgets"])
    enc = Encoder(
        ModelConfig(**model_cfg),
        seed=int(config.get("seed", 0)),
        dtype=np.dtype(config.get("dtype", "float64")),
    )
    enc.load_state(tensors)
    return enc, config
