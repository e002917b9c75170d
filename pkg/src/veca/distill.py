"""Distillation objective, synthetic teacher, and the training loop.

The student is trained to match a frozen teacher's global feature (cosine
distance) and dense patch features (cosine distance plus MSE, weighted by
beta), with the dense term scaled by lambda. One active-core budget is
sampled per optimizer step and shared by the whole batch. The optimizer is
a decoupled-weight-decay adaptive-moment method with a linear-warmup cosine
learning-rate schedule.

At desk scale the teacher is a frozen randomly-initialized dense
full-self-attention encoder; precomputed target files (see
:func:`save_target_file`) can stand in for a real teacher ingested offline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rope as rope_mod
from .data import synthetic_images
from .elastic import BudgetDistribution, sample_budget
from .errors import ConfigError, NonFiniteError, ShapeError, TrainingDivergedError, VecaError
from .model import Encoder, ModelConfig, ffn_swiglu
from .rng import RngStream
from .rope import RopeSpec
from .tensor import (
    Tensor,
    add,
    clip_min,
    div,
    layer_norm,
    linear,
    matmul,
    mul,
    neg,
    power,
    reshape,
    softmax_rows,
    sub,
    tmean,
    transpose,
    tsum,
)


@dataclass(frozen=True)
class DistillConfig:
    """Objective weights plus the optimizer schedule for one training stage."""

    lr: float = 3e-3
    min_lr: float = 3e-4
    warmup_steps: int = 20
    total_steps: int = 500
    weight_decay: float = 0.01
    batch_size: int = 8
    lambda_dense: float = 1.0
    beta_mse: float = 1.0
    norm_eps: float = 1e-6
    resolutions: tuple[int, ...] = (16,)

    def __post_init__(self):
        if self.lambda_dense < 0 or self.beta_mse < 0:
            raise ConfigError("lambda_dense and beta_mse must be nonnegative")
        if not 0 < self.min_lr <= self.lr:
            raise ConfigError(f"need 0 < min_lr <= lr, got {self.min_lr} and {self.lr}")
        if self.warmup_steps < 0 or self.total_steps < 1:
            raise ConfigError("invalid step counts")


def _safe_norm(t: Tensor, eps: float) -> Tensor:
    # max(||t||, eps) over the last axis, computed as sqrt(max(sum t^2, eps^2))
    # so the gradient stays finite at the floor
    sumsq = tsum(mul(t, t), axis=-1)
    return power(clip_min(sumsq, eps * eps), 0.5)


def loss_global(y: Tensor, y_star: Tensor, eps: float = 1e-6) -> Tensor:
    """Mean cosine distance 1 - <y, y*> / (||y|| ||y*||), norms floored at eps."""
    if y.shape != y_star.shape:
        raise ShapeError(f"loss_global: shapes differ: {y.shape} vs {y_star.shape}")
    dot = tsum(mul(y, y_star), axis=-1)
    cosine = div(dot, mul(_safe_norm(y, eps), _safe_norm(y_star, eps)))
    return tmean(add(neg(cosine), 1.0))


def loss_dense(z: Tensor, z_star: Tensor, beta_mse: float = 1.0, eps: float = 1e-6) -> Tensor:
    """Patch-mean cosine distance plus beta * elementwise-mean squared error."""
    if z.shape != z_star.shape:
        raise ShapeError(f"loss_dense: shapes differ: {z.shape} vs {z_star.shape}")
    dot = tsum(mul(z, z_star), axis=-1)
    cosine = div(dot, mul(_safe_norm(z, eps), _safe_norm(z_star, eps)))
    cos_term = tmean(add(neg(cosine), 1.0))
    diff = sub(z, z_star)
    return add(cos_term, mul(tmean(mul(diff, diff)), float(beta_mse)))


def total_loss(
    images: np.ndarray,
    active_c: int,
    student: Encoder,
    teacher,
    cfg: DistillConfig,
    *,
    targets: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """Global + lambda * dense loss of the student at the given budget.

    ``targets`` overrides the teacher (used for precomputed target files).
    """
    if targets is None:
        targets = teacher.targets(images)
    y_star = Tensor(np.asarray(targets[0], dtype=student.dtype))
    z_star = Tensor(np.asarray(targets[1], dtype=student.dtype))
    y, z = student(images, active_c)
    lg = loss_global(y, y_star, cfg.norm_eps)
    ld = loss_dense(z, z_star, cfg.beta_mse, cfg.norm_eps)
    loss = add(lg, mul(ld, float(cfg.lambda_dense)))
    return loss, {"global": float(lg.data), "dense": float(ld.data)}


class SyntheticTeacher:
    """Frozen randomly-initialized dense full-self-attention encoder.

    Two pre-norm blocks at the student's width and patch size, full N x N
    attention over patch tokens with grid rotary coordinates, SwiGLU FFN,
    final LayerNorm. Global target is the mean-pooled patch feature. Purely
    deterministic for a fixed seed.
    """

    def __init__(self, config: ModelConfig, seed: int = 7001, layers: int = 2, dtype=np.float64):
        self.config = config
        self.dtype = np.dtype(dtype).type
        self.layers = layers
        self.rope = RopeSpec(config.head_dim, config.rope_base)
        root = RngStream(seed, "teacher")
        d = config.dim

        def t(name: str, shape, kind: str = "weight") -> Tensor:
            if kind == "weight":
                arr = root.spawn(name).trunc_normal(0.02, size=shape)
            elif kind == "zeros":
                arr = np.zeros(shape)
            else:
                arr = np.ones(shape)
            return Tensor(arr.astype(self.dtype))

        pdim = config.patch_size * config.patch_size * config.in_channels
        self.patch_w, self.patch_b = t("patch.w", (pdim, d)), t("patch.b", d, "zeros")
        self.blocks = []
        for i in range(layers):
            blk = {
                "ng": t(f"b{i}.ng", d, "ones"), "nb": t(f"b{i}.nb", d, "zeros"),
                "wq": t(f"b{i}.wq", (d, d)), "bq": t(f"b{i}.bq", d, "zeros"),
                "wk": t(f"b{i}.wk", (d, d)), "bk": t(f"b{i}.bk", d, "zeros"),
                "wv": t(f"b{i}.wv", (d, d)), "bv": t(f"b{i}.bv", d, "zeros"),
                "wo": t(f"b{i}.wo", (d, d)), "bo": t(f"b{i}.bo", d, "zeros"),
                "fg": t(f"b{i}.fg", d, "ones"), "fb": t(f"b{i}.fb", d, "zeros"),
                "w1": t(f"b{i}.w1", (d, 2 * config.hidden)), "b1": t(f"b{i}.b1", 2 * config.hidden, "zeros"),
                "w2": t(f"b{i}.w2", (config.hidden, d)), "b2": t(f"b{i}.b2", d, "zeros"),
            }
            self.blocks.append(blk)
        self.fg, self.fb = t("final.g", d, "ones"), t("final.b", d, "zeros")

    def _dense_attention(self, x: Tensor, coords: Tensor, blk: dict) -> Tensor:
        b, n, d = x.shape
        h = self.config.heads
        hd = d // h

        def split(t: Tensor) -> Tensor:
            return transpose(reshape(t, (b, n, h, hd)), (0, 2, 1, 3))

        q = split(linear(x, blk["wq"], blk["bq"]))
        k = split(linear(x, blk["wk"], blk["bk"]))
        v = split(linear(x, blk["wv"], blk["bv"]))
        ct, st = rope_mod.cos_sin(self.rope, coords)
        ct = reshape(ct, (b, 1, n, hd // 2))
        st = reshape(st, (b, 1, n, hd // 2))
        q, k = rope_mod.apply(q, ct, st), rope_mod.apply(k, ct, st)
        probs = softmax_rows(mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd)))
        out = reshape(transpose(matmul(probs, v), (0, 2, 1, 3)), (b, n, d))
        return linear(out, blk["wo"], blk["bo"])

    def targets(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        arr = np.asarray(images, dtype=self.dtype)
        p = cfg.patch_size
        b, ch, himg, wimg = arr.shape
        hp, wp = himg // p, wimg // p
        tiles = arr.reshape(b, ch, hp, p, wp, p).transpose(0, 2, 4, 1, 3, 5)
        flat = Tensor(np.ascontiguousarray(tiles.reshape(b, hp * wp, ch * p * p)))
        x = linear(flat, self.patch_w, self.patch_b)
        coords = Tensor(
            np.broadcast_to(rope_mod.patch_grid(hp, wp).astype(self.dtype)[None], (b, hp * wp, 2)).copy()
        )
        for blk in self.blocks:
            x = add(x, self._dense_attention(layer_norm(x, blk["ng"], blk["nb"]), coords, blk))
            x = add(x, ffn_swiglu(layer_norm(x, blk["fg"], blk["fb"]), blk["w1"], blk["b1"], blk["w2"], blk["b2"]))
        x = layer_norm(x, self.fg, self.fb)
        dense = x.data.copy()
        return dense.mean(axis=1), dense


def save_target_file(path: str | Path, images: np.ndarray, y: np.ndarray, z: np.ndarray) -> None:
    """Write a precomputed-teacher target file in the checkpoint container."""
    from .checkpoint import save_container

    if images.shape[0] != y.shape[0] or y.shape[0] != z.shape[0]:
        raise ShapeError("images, global and dense targets must share a batch axis")
    save_container(
        path,
        {"kind": "teacher_targets", "count": int(images.shape[0])},
        {"images": np.asarray(images), "global": np.asarray(y), "dense": np.asarray(z)},
    )


class FileTeacher:
    """Fixed (image, target) set loaded from a precomputed target file."""

    def __init__(self, path: str | Path):
        from .checkpoint import load_container

        meta, tensors = load_container(path)
        if meta.get("kind") != "teacher_targets":
            raise VecaError(f"{path}: not a teacher-target container")
        self.images = tensors["images"]
        self.global_targets = tensors["global"]
        self.dense_targets = tensors["dense"]

    def batch(self, step: int, batch_size: int) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
        n = self.images.shape[0]
        idx = [((step - 1) * batch_size + i) % n for i in range(batch_size)]
        return self.images[idx], (self.global_targets[idx], self.dense_targets[idx])


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay."""

    def __init__(
        self,
        params: dict[str, Tensor],
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * g * g
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            new = p.data.astype(np.float64) - lr * update - lr * self.weight_decay * p.data
            p.data = new.astype(p.data.dtype)


def lr_schedule(step: int, cfg: DistillConfig) -> float:
    """Linear warmup to lr, then cosine decay to min_lr at total_steps. 1-indexed."""
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    span = max(cfg.total_steps - cfg.warmup_steps, 1)
    progress = (step - cfg.warmup_steps) / span
    return cfg.min_lr + (cfg.lr - cfg.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainRecord:
    step: int
    budget: int
    loss: float
    lr: float


def train(
    student: Encoder,
    teacher,
    dist: BudgetDistribution,
    cfg: DistillConfig,
    *,
    data_stream: RngStream,
    budget_stream: RngStream,
    file_teacher: FileTeacher | None = None,
    budget_schedule: list[int] | None = None,
) -> list[TrainRecord]:
    """Elastic distillation loop; mutates the student in place.

    One budget per optimizer step shared by the whole batch. A saved
    ``budget_schedule`` replays budgets exactly instead of sampling. Aborts
    with the step index and budget if any step produces a non-finite value.
    """
    if budget_schedule is not None and len(budget_schedule) < cfg.total_steps:
        raise ConfigError(
            f"budget schedule has {len(budget_schedule)} entries for {cfg.total_steps} steps"
        )
    opt = AdamW(student.params, weight_decay=cfg.weight_decay)
    res_stream = data_stream.spawn("resolutions") if len(cfg.resolutions) > 1 else None
    records: list[TrainRecord] = []
    for step in range(1, cfg.total_steps + 1):
        if budget_schedule is not None:
            budget = int(budget_schedule[step - 1])
        else:
            budget = sample_budget(dist, budget_stream)
        if file_teacher is not None:
            images, targets = file_teacher.batch(step, cfg.batch_size)
        else:
            res = (
                cfg.resolutions[0]
                if res_stream is None
                else cfg.resolutions[int(res_stream.integers(0, len(cfg.resolutions)))]
            )
            images = synthetic_images(data_stream, cfg.batch_size, res)
            targets = None
        try:
            loss, _ = total_loss(images, budget, student, teacher, cfg, targets=targets)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteError("loss value")
            student.zero_grad()
            loss.backward()
        except NonFiniteError as err:
            raise TrainingDivergedError(step, budget, str(err)) from err
        lr = lr_schedule(step, cfg)
        opt.step(lr)
        records.append(TrainRecord(step, budget, value, lr))
    return records
