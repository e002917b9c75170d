"""Axial 2D rotary positional encoding over continuous coordinates.

Tokens carry planar coordinates in [-1, 1]^2 (order x, y). Each attention
head's query/key vectors are split into rotation pairs of adjacent elements
(2t, 2t+1); the first half of the pairs rotate by angles proportional to x,
the second half by angles proportional to y. Angles are coordinate * freq * pi
with per-pair frequencies freq_j = base**(-j / num_freqs), strictly decreasing
from 1. This ordering (x pairs first, adjacent-element pairing) is part of the
checkpoint contract.

Also provides the fixed patch coordinate grid and the deterministic
farthest-point initialization of core coordinate states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConfigError, ShapeError
from .tensor import Tensor, _accumulate, _from_op, as_tensor, cos, sin


@dataclass(frozen=True)
class RopeSpec:
    """Frequency layout for one head dimension."""

    head_dim: int
    base: float = 100.0

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 4 != 0:
            raise ConfigError(f"head_dim must be a positive multiple of 4, got {self.head_dim}")
        if self.base <= 0:
            raise ConfigError(f"frequency base must be positive, got {self.base}")

    @property
    def num_freqs(self) -> int:
        return self.head_dim // 4

    def freqs(self) -> np.ndarray:
        j = np.arange(self.num_freqs, dtype=np.float64)
        return self.base ** (-j / self.num_freqs)


def patch_grid(hp: int, wp: int) -> np.ndarray:
    """Centers of an hp x wp patch grid in [-1, 1]^2, row-major over (row, col).

    Patch (r, c) maps to (x, y) = ((c + 0.5) / wp * 2 - 1, (r + 0.5) / hp * 2 - 1),
    computed as (2c + 1 - wp) / wp so that flipping the column order negates x
    exactly in floating point for every grid width.
    """
    if hp < 1 or wp < 1:
        raise ShapeError(f"patch_grid: grid extents must be >= 1, got ({hp}, {wp})")
    ys = (2.0 * np.arange(hp, dtype=np.float64) + 1.0 - hp) / hp
    xs = (2.0 * np.arange(wp, dtype=np.float64) + 1.0 - wp) / wp
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([gx, gy], axis=-1).reshape(-1, 2)


def angles(spec: RopeSpec, coords) -> Tensor:
    """Rotation angles [..., T, head_dim/2] from coordinates [..., T, 2].

    Columns 0..num_freqs-1 are x * freq_j * pi, the rest are y * freq_j * pi.
    Differentiable in the coordinates; one tape node.
    """
    coords = as_tensor(coords)
    if coords.shape[-1] != 2:
        raise ShapeError(f"angles: coords must end in axis of size 2, got {coords.shape}")
    nf = spec.num_freqs
    f = (spec.freqs() * np.pi).astype(coords.data.dtype)
    data = np.concatenate(
        [coords.data[..., 0:1] * f, coords.data[..., 1:2] * f], axis=-1
    )

    def grad_fn(g: np.ndarray) -> None:
        dc = np.stack(
            [(g[..., :nf] * f).sum(axis=-1), (g[..., nf:] * f).sum(axis=-1)], axis=-1
        )
        _accumulate(coords, dc)

    return _from_op(data, (coords,), grad_fn, "rope_angles")


def cos_sin(spec: RopeSpec, coords) -> tuple[Tensor, Tensor]:
    """Per-token rotation tables (cos, sin), each [..., T, head_dim/2].

    One angle per rotation pair: x-driven pairs first, then y-driven pairs.
    """
    theta = angles(spec, coords)
    return cos(theta), sin(theta)


def apply(q_or_k: Tensor, cos_t: Tensor, sin_t: Tensor) -> Tensor:
    """Rotate each adjacent element pair (a, b) = (2t, 2t+1) by its angle.

    (a, b) -> (a cos - b sin, a sin + b cos). Tables must be numpy-broadcastable
    to the input's shape minus its pair axis (the deliberate exception to the
    substrate's no-broadcast rule: attention shares one table across heads).
    Per-token vector norms are preserved.
    """
    q_or_k, cos_t, sin_t = as_tensor(q_or_k), as_tensor(cos_t), as_tensor(sin_t)
    hd = q_or_k.shape[-1]
    if hd % 2 or cos_t.shape[-1] != hd // 2 or cos_t.shape != sin_t.shape:
        raise ShapeError(
            f"apply: tables {cos_t.shape}/{sin_t.shape} do not pair with input {q_or_k.shape}"
        )
    a, b = q_or_k.data[..., 0::2], q_or_k.data[..., 1::2]
    ct, st = cos_t.data, sin_t.data
    out = np.empty(np.broadcast_shapes(a.shape, ct.shape) + (2,), dtype=q_or_k.data.dtype)
    out[..., 0] = a * ct - b * st
    out[..., 1] = a * st + b * ct
    out = out.reshape(out.shape[:-2] + (hd,))

    def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        extra = g.ndim - len(shape)
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, (ds, dg) in enumerate(zip(shape, g.shape)) if ds == 1 and dg != 1)
        return g.sum(axis=axes, keepdims=True) if axes else g

    def grad_fn(g: np.ndarray) -> None:
        ge, go = g[..., 0::2], g[..., 1::2]
        dz = np.empty(g.shape[:-1] + (hd // 2, 2), dtype=g.dtype)
        dz[..., 0] = ge * ct + go * st
        dz[..., 1] = -ge * st + go * ct
        _accumulate(q_or_k, unbroadcast(dz.reshape(g.shape), q_or_k.shape))
        _accumulate(cos_t, unbroadcast(ge * a + go * b, cos_t.shape))
        _accumulate(sin_t, unbroadcast(go * a - ge * b, sin_t.shape))

    return _from_op(out, (q_or_k, cos_t, sin_t), grad_fn, "rope_apply")


def fps_init(m: int, grid_side: int = 64) -> np.ndarray:
    """Farthest-point sampling over a grid_side^2 lattice; returns atanh states.

    Deterministic: the seed is the lattice point nearest the origin and every
    greedy step picks the candidate maximizing the minimum distance to the
    chosen set, ties broken by lowest row-major index. Points are clamped to
    +-0.999999 before atanh so the returned states are always finite.
    """
    if m < 1:
        raise CapacityError(f"fps_init: need at least one point, got {m}")
    if m > grid_side * grid_side:
        raise CapacityError(
            f"fps_init: {m} points exceed lattice capacity {grid_side * grid_side}"
        )
    lattice = patch_grid(grid_side, grid_side)
    dist_to_origin = np.linalg.norm(lattice, axis=1)
    chosen = [int(np.argmin(dist_to_origin))]
    min_dist = np.linalg.norm(lattice - lattice[chosen[0]], axis=1)
    for _ in range(1, m):
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(lattice - lattice[nxt], axis=1))
    points = np.clip(lattice[chosen], -0.999999, 0.999999)
    return np.arctanh(points)
