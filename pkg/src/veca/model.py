"""The full encoder: patch embedding, core bank, blocks, coordinate updates.

Architecture summary. Images are split into non-overlapping P x P patches and
affinely embedded (no normalization after the projection). The active core
prefix is concatenated in front of the patch tokens; every block applies
pre-norm block-sparse attention followed by a pre-norm SwiGLU feed-forward.
Before each block after the first, the unconstrained core coordinate states
are nudged by a learned per-layer affine head scaled by a learned scalar, and
the bounded coordinates used for the rotary tables are tanh of the states.
After the final block a LayerNorm is applied to the whole sequence; the first
core token is the global feature and the patch tokens are the dense features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rope as rope_mod
from .attention import AttnParams, core_attention
from .elastic import DEFAULT_BUDGETS, CoreBank, active_prefix
from .errors import BudgetError, ConfigError, ResolutionError, ShapeError
from .rng import RngStream
from .rope import RopeSpec
from .tensor import (
    Tensor,
    add,
    broadcast_to,
    concat,
    getitem,
    layer_norm,
    linear,
    mul,
    reshape,
    silu,
    tanh,
)
from .tensor import dropout as dropout_op

@dataclass(frozen=True)
class ModelConfig:
    layers: int
    dim: int
    heads: int
    mlp_ratio: float
    patch_size: int = 16
    in_channels: int = 3
    max_cores: int = 64
    chunk: int = 8
    budgets: tuple[int, ...] = DEFAULT_BUDGETS
    rope_base: float = 100.0
    norm_eps: float = 1e-6
    dropout: float = 0.0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if (self.dim // self.heads) % 4:
            raise ConfigError(
                f"head dim {self.dim // self.heads} must be a multiple of 4 for 2D rotary pairs"
            )
        if self.max_cores % self.chunk:
            raise ConfigError(f"max_cores {self.max_cores} not divisible by chunk {self.chunk}")
        bad = [b for b in self.budgets if b % self.chunk or not 0 < b <= self.max_cores]
        if bad or list(self.budgets) != sorted(set(self.budgets)):
            raise ConfigError(
                f"budgets must be increasing multiples of {self.chunk} within "
                f"[{self.chunk}, {self.max_cores}], got {self.budgets}"
            )

    @property
    def hidden(self) -> int:
        return int(self.dim * self.mlp_ratio)

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def rope_spec(self) -> RopeSpec:
        return RopeSpec(head_dim=self.head_dim, base=self.rope_base)


PRESETS: dict[str, ModelConfig] = {
    "small": ModelConfig(layers=12, dim=384, heads=6, mlp_ratio=2.67),
    "small_plus": ModelConfig(layers=12, dim=384, heads=6, mlp_ratio=4.00),
    "base": ModelConfig(layers=12, dim=768, heads=12, mlp_ratio=2.67),
    "large": ModelConfig(layers=24, dim=1024, heads=16, mlp_ratio=2.67),
    # desk-scale preset used by training, gradient checks, and probes
    "tiny-test": ModelConfig(layers=2, dim=16, heads=2, mlp_ratio=2.67, patch_size=4),
}


def get_preset(name: str) -> ModelConfig:
    key = name.strip().lower().replace("-", "_")
    for preset, cfg in PRESETS.items():
        if preset.replace("-", "_") == key:
            return cfg
    raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")


def param_count(config: ModelConfig) -> int:
    """Exact number of learnable scalars for a configuration."""
    d, hidden = config.dim, config.hidden
    patch = config.patch_size * config.patch_size * config.in_channels * d + d
    attn = 4 * (d * d + d)
    norms = 2 * 2 * d
    ffn = d * 2 * hidden + 2 * hidden + hidden * d + d
    per_block = norms + attn + ffn
    cores = config.max_cores * d + config.max_cores * 2
    coord_heads = (config.layers - 1) * (d * 2 + 2) + (config.layers - 1)
    return patch + config.layers * per_block + 2 * d + cores + coord_heads


@dataclass
class BlockParams:
    norm_attn_gamma: Tensor
    norm_attn_beta: Tensor
    attn: AttnParams
    norm_ffn_gamma: Tensor
    norm_ffn_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor


def ffn_swiglu(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Gated feed-forward: split w1's output into gate u and value v halves,
    return w2(SiLU(u) * v)."""
    h = linear(x, w1, b1)
    hidden = h.shape[-1] // 2
    u = getitem(h, (..., slice(0, hidden)))
    v = getitem(h, (..., slice(hidden, None)))
    return linear(mul(silu(u), v), w2, b2)


def block_forward(
    x: Tensor,
    coords,
    active_c: int,
    block: BlockParams,
    rope: RopeSpec,
    eps: float = 1e-6,
    attn_dropout: float = 0.0,
    dropout_stream: RngStream | None = None,
    capture: dict | None = None,
) -> Tensor:
    """Pre-norm residual attention, then pre-norm residual SwiGLU."""
    a = core_attention(
        block.attn,
        layer_norm(x, block.norm_attn_gamma, block.norm_attn_beta, eps),
        coords,
        active_c,
        rope,
        attn_dropout,
        dropout_stream,
        capture,
    )
    x = add(x, a)
    f = ffn_swiglu(
        layer_norm(x, block.norm_ffn_gamma, block.norm_ffn_beta, eps),
        block.ffn_w1,
        block.ffn_b1,
        block.ffn_w2,
        block.ffn_b2,
    )
    if attn_dropout > 0.0 and dropout_stream is not None:
        f = dropout_op(f, attn_dropout, dropout_stream)
    return add(x, f)


class Encoder:
    """Elastic core-periphery encoder with named parameters.

    Parameters live in ``self.params`` (name -> Tensor with requires_grad).
    Initialization draws each parameter from its own named stream, so values
    do not depend on construction order. Weights are immutable during
    inference; the trainer mutates ``.data`` in place between steps.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float64):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype).type
        self.rope = config.rope_spec()
        self.params: dict[str, Tensor] = {}
        self._grid_cache: dict[tuple[int, int, int], Tensor] = {}
        root = RngStream(seed, "init")
        d = config.dim

        def par(name: str, data: np.ndarray) -> Tensor:
            t = Tensor(np.ascontiguousarray(data, dtype=self.dtype), requires_grad=True)
            self.params[name] = t
            return t

        def affine(name: str, din: int, dout: int) -> tuple[Tensor, Tensor]:
            w = par(f"{name}.w", root.spawn(f"{name}.w").trunc_normal(0.02, size=(din, dout)))
            b = par(f"{name}.b", np.zeros(dout))
            return w, b

        pdim = config.patch_size * config.patch_size * config.in_channels
        self.patch_w, self.patch_b = affine("patch_embed", pdim, d)

        self.blocks: list[BlockParams] = []
        for i in range(config.layers):
            pre = f"blocks.{i}"
            ng = par(f"{pre}.norm_attn.gamma", np.ones(d))
            nb = par(f"{pre}.norm_attn.beta", np.zeros(d))
            attn = AttnParams.init(d, config.heads, root.spawn(f"{pre}.attn"), self.dtype)
            for pname, t in attn.tensors().items():
                self.params[f"{pre}.attn.{pname}"] = t
            fg = par(f"{pre}.norm_ffn.gamma", np.ones(d))
            fb = par(f"{pre}.norm_ffn.beta", np.zeros(d))
            w1, b1 = affine(f"{pre}.ffn.fc1", d, 2 * config.hidden)
            w2, b2 = affine(f"{pre}.ffn.fc2", config.hidden, d)
            self.blocks.append(BlockParams(ng, nb, attn, fg, fb, w1, b1, w2, b2))

        self.final_gamma = par("final_norm.gamma", np.ones(d))
        self.final_beta = par("final_norm.beta", np.zeros(d))

        n_chunks = config.max_cores // config.chunk
        fps_states = rope_mod.fps_init(config.max_cores)
        token_chunks, coord_chunks = [], []
        for j in range(n_chunks):
            tok = root.spawn(f"core.tokens.{j}").normal(0.02, size=(config.chunk, d))
            token_chunks.append(par(f"core.tokens.{j}", tok))
            sl = fps_states[j * config.chunk : (j + 1) * config.chunk].copy()
            coord_chunks.append(par(f"core.coords.{j}", sl))
        self.core_bank = CoreBank(token_chunks, coord_chunks)

        self.coord_heads: list[tuple[Tensor, Tensor, Tensor]] = []
        for i in range(config.layers - 1):
            w, b = affine(f"coord_head.{i}", d, 2)
            alpha = par(f"coord_head.{i}.alpha", np.full(1, 0.01))
            self.coord_heads.append((w, b, alpha))

    # -- parameter plumbing ---------------------------------------------------

    @property
    def num_params(self) -> int:
        return sum(t.size for t in self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ConfigError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, t in self.params.items():
            arr = state[name]
            if arr.shape != t.shape:
                raise ShapeError(f"parameter {name}: shape {arr.shape} != {t.shape}")
            t.data = np.ascontiguousarray(arr, dtype=self.dtype)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    # -- forward passes ---------------------------------------------------------

    def patch_embed(self, images) -> tuple[Tensor, tuple[int, int]]:
        """Affine embedding of flattened patches; row-major patch order."""
        arr = images.data if isinstance(images, Tensor) else np.asarray(images)
        arr = arr.astype(self.dtype, copy=False)
        if arr.ndim != 4 or arr.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"images must be [B, {self.config.in_channels}, H, W], got {arr.shape}"
            )
        p = self.config.patch_size
        b, ch, himg, wimg = arr.shape
        if himg % p or wimg % p:
            raise ResolutionError(
                f"resolution {himg}x{wimg} not divisible by patch size {p}"
            )
        hp, wp = himg // p, wimg // p
        tiles = arr.reshape(b, ch, hp, p, wp, p).transpose(0, 2, 4, 1, 3, 5)
        flat = Tensor(np.ascontiguousarray(tiles.reshape(b, hp * wp, ch * p * p)))
        return linear(flat, self.patch_w, self.patch_b), (hp, wp)

    def _check_budget(self, active_c: int) -> int:
        if active_c not in self.config.budgets:
            raise BudgetError(
                f"budget {active_c} not in valid budget set {self.config.budgets}"
            )
        return active_c

    def encode_tokens(
        self,
        patch_tokens: Tensor,
        hp: int,
        wp: int,
        active_c: int,
        num_blocks: int | None = None,
        *,
        dropout_stream: RngStream | None = None,
        coord_jitter_stream: RngStream | None = None,
        capture: list | None = None,
        apply_final_norm: bool = True,
    ) -> Tensor:
        """Run the block stack over [active cores ; patch_tokens].

        Returns the full token-state tensor [B, T, D]. ``num_blocks`` truncates
        the stack (used by structural probes); ``capture`` collects per-layer
        attention internals for analysis.
        """
        cfg = self.config
        c = self._check_budget(active_c)
        b, n, d = patch_tokens.shape
        if n != hp * wp:
            raise ShapeError(f"got {n} patch tokens for an {hp}x{wp} grid")
        depth = cfg.layers if num_blocks is None else num_blocks
        if not 0 < depth <= cfg.layers:
            raise ConfigError(f"num_blocks must be in [1, {cfg.layers}], got {depth}")

        core_tokens, rho = active_prefix(self.core_bank, c)
        cores_b = broadcast_to(reshape(core_tokens, (1, c, d)), (b, c, d))
        rho_b = broadcast_to(reshape(rho, (1, c, 2)), (b, c, 2))

        if coord_jitter_stream is not None:
            # optional train-time augmentation: one global shift per image
            grid = rope_mod.patch_grid(hp, wp).astype(self.dtype)
            grid = np.broadcast_to(grid[None], (b, n, 2)).copy()
            grid += coord_jitter_stream.uniform(-0.02, 0.02, size=(b, 1, 2)).astype(self.dtype)
            patch_coords = Tensor(grid)
        else:
            # constant leaf tensor, safe to share across graphs
            key = (b, hp, wp)
            patch_coords = self._grid_cache.get(key)
            if patch_coords is None:
                grid = rope_mod.patch_grid(hp, wp).astype(self.dtype)
                patch_coords = Tensor(np.broadcast_to(grid[None], (b, n, 2)).copy())
                self._grid_cache[key] = patch_coords

        x = concat([cores_b, patch_tokens], axis=1)
        core_u = tanh(rho_b)
        for li in range(depth):
            if li > 0:
                w, bias, alpha = self.coord_heads[li - 1]
                feats = getitem(x, (slice(None), slice(0, c)))
                delta = linear(feats, w, bias)
                alpha_b = broadcast_to(reshape(alpha, (1, 1, 1)), delta.shape)
                rho_b = add(rho_b, mul(alpha_b, delta))
                core_u = tanh(rho_b)
            coords = concat([core_u, patch_coords], axis=1)
            layer_capture: dict | None = None
            if capture is not None:
                layer_capture = {"coords": coords.data.copy()}
                capture.append(layer_capture)
            x = block_forward(
                x,
                coords,
                c,
                self.blocks[li],
                self.rope,
                cfg.norm_eps,
                cfg.dropout,
                dropout_stream,
                layer_capture,
            )
        if apply_final_norm:
            x = layer_norm(x, self.final_gamma, self.final_beta, cfg.norm_eps)
        return x

    def forward(
        self,
        images,
        active_c: int | None = None,
        *,
        dropout_stream: RngStream | None = None,
        coord_jitter_stream: RngStream | None = None,
        capture: list | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Encode images into (global [B, D], dense [B, N, D]) features."""
        c = self.config.max_cores if active_c is None else int(active_c)
        tokens, (hp, wp) = self.patch_embed(images)
        x = self.encode_tokens(
            tokens,
            hp,
            wp,
            c,
            dropout_stream=dropout_stream,
            coord_jitter_stream=coord_jitter_stream,
            capture=capture,
        )
        global_feat = getitem(x, (slice(None), 0))
        dense = getitem(x, (slice(None), slice(c, None)))
        return global_feat, dense

    def __call__(self, images, active_c: int | None = None, **kw):
        return self.forward(images, active_c, **kw)
