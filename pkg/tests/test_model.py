import numpy as np
import pytest

from veca.attention import AttnParams
from veca.data import synthetic_images
from veca.errors import BudgetError, ConfigError, ResolutionError
from veca.model import (
    PRESETS,
    BlockParams,
    Encoder,
    ModelConfig,
    block_forward,
    ffn_swiglu,
    get_preset,
    param_count,
)
from veca.rng import RngStream
from veca.rope import RopeSpec
from veca.tensor import Tensor, grad_check, mul, silu, tsum


class TestConfig:
    def test_presets_exist(self):
        assert set(PRESETS) == {"small", "small_plus", "base", "large", "tiny-test"}

    def test_preset_lookup_normalizes(self):
        assert get_preset("tiny_test") is get_preset("tiny-test")
        assert get_preset("SMALL_PLUS") is PRESETS["small_plus"]
        with pytest.raises(ConfigError):
            get_preset("medium")

    def test_table_shapes(self):
        small = get_preset("small")
        assert (small.layers, small.dim, small.heads, small.mlp_ratio) == (12, 384, 6, 2.67)
        large = get_preset("large")
        assert (large.layers, large.dim, large.heads) == (24, 1024, 16)
        assert small.patch_size == 16 and small.max_cores == 64 and small.chunk == 8
        assert small.budgets == (8, 16, 24, 32, 40, 48, 56, 64)

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            ModelConfig(layers=1, dim=10, heads=3, mlp_ratio=2.0)  # dim % heads
        with pytest.raises(ConfigError):
            ModelConfig(layers=1, dim=12, heads=2, mlp_ratio=2.0)  # head_dim % 4
        with pytest.raises(ConfigError):
            # default budgets exceed a reduced core capacity
            ModelConfig(layers=1, dim=8, heads=2, mlp_ratio=2.0, max_cores=16)
        ModelConfig(layers=1, dim=8, heads=2, mlp_ratio=2.0, max_cores=16, budgets=(8, 16))

    def test_hidden_floor(self):
        assert get_preset("small").hidden == 1025
        assert get_preset("base").hidden == 2050
        assert get_preset("large").hidden == 2734
        assert get_preset("small_plus").hidden == 1536


class TestParamCount:
    def test_matches_constructed_tiny(self, tiny_encoder):
        assert tiny_encoder.num_params == param_count(tiny_encoder.config)

    def test_matches_constructed_one_block(self):
        cfg = ModelConfig(layers=1, dim=16, heads=2, mlp_ratio=2.67, patch_size=4)
        assert Encoder(cfg, seed=1).num_params == param_count(cfg)

    @pytest.mark.parametrize(
        "preset,reference_millions",
        [("small", 21.63), ("small_plus", 28.72), ("base", 85.73), ("large", 303.20)],
    )
    def test_reference_counts_within_half_percent(self, preset, reference_millions):
        got = param_count(get_preset(preset))
        assert abs(got / 1e6 - reference_millions) / reference_millions <= 0.005

    def test_independent_of_budget_set(self):
        base = ModelConfig(layers=2, dim=16, heads=2, mlp_ratio=2.0, patch_size=4)
        restricted = ModelConfig(
            layers=2, dim=16, heads=2, mlp_ratio=2.0, patch_size=4, budgets=(8, 64)
        )
        assert param_count(base) == param_count(restricted)


class TestPatchEmbed:
    def test_shapes_256(self):
        enc = Encoder(get_preset("tiny-test"), seed=0)
        imgs = np.zeros((2, 3, 32, 32))
        tokens, (hp, wp) = enc.patch_embed(imgs)
        assert tokens.shape == (2, 64, 16) and (hp, wp) == (8, 8)

    def test_resolution_error_names_patch_size(self):
        enc = Encoder(get_preset("tiny-test"), seed=0)
        with pytest.raises(ResolutionError) as err:
            enc.patch_embed(np.zeros((1, 3, 18, 16)))
        assert "4" in str(err.value)

    def test_uniform_image_gives_identical_embeddings(self):
        enc = Encoder(get_preset("tiny-test"), seed=0)
        tokens, _ = enc.patch_embed(np.full((1, 3, 16, 16), 0.42))
        np.testing.assert_array_equal(
            tokens.data, np.tile(tokens.data[:, :1], (1, 16, 1))
        )

    def test_rectangular(self):
        enc = Encoder(get_preset("tiny-test"), seed=0)
        tokens, (hp, wp) = enc.patch_embed(np.zeros((1, 3, 8, 16)))
        assert tokens.shape == (1, 8, 16) and (hp, wp) == (2, 4)

    def test_patch16_counts(self):
        cfg = ModelConfig(layers=1, dim=16, heads=2, mlp_ratio=2.0, patch_size=16)
        enc = Encoder(cfg, seed=0)
        _, (hp, wp) = enc.patch_embed(np.zeros((1, 3, 32, 32)))
        assert hp * wp == 4
        _, (hp, wp) = enc.patch_embed(np.zeros((1, 3, 256, 256)))
        assert hp * wp == 256


def ffn_scalar_oracle(x, w1, b1, w2, b2):
    hidden = w2.shape[0]
    out = np.zeros((x.shape[0], w2.shape[1]))
    for r in range(x.shape[0]):
        h = x[r] @ w1 + b1
        u, v = h[:hidden], h[hidden:]
        gated = u / (1.0 + np.exp(-u)) * v
        out[r] = gated @ w2 + b2
    return out


class TestFfnSwiglu:
    def test_zero_w1_leaves_w2_bias(self):
        rng = np.random.default_rng(0)
        w2 = Tensor(rng.normal(size=(5, 4)))
        b2 = Tensor(rng.normal(size=4))
        out = ffn_swiglu(
            Tensor(rng.normal(size=(3, 4))),
            Tensor(np.zeros((4, 10))),
            Tensor(np.zeros(10)),
            w2,
            b2,
        )
        np.testing.assert_array_equal(out.data, np.tile(b2.data, (3, 1)))

    def test_silu_asymptote(self):
        u = Tensor(np.array([30.0]))
        assert abs(float(silu(u).data[0]) - 30.0) <= 1e-9

    def test_vs_scalar_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 6))
        w1, b1 = rng.normal(size=(6, 10)), rng.normal(size=10)
        w2, b2 = rng.normal(size=(5, 6)), rng.normal(size=6)
        got = ffn_swiglu(Tensor(x), Tensor(w1), Tensor(b1), Tensor(w2), Tensor(b2)).data
        assert np.abs(got - ffn_scalar_oracle(x, w1, b1, w2, b2)).max() <= 1e-12


def make_block(dim, heads, hidden, seed, zero_out=False):
    stream = RngStream(seed, "block")
    attn = AttnParams.init(dim, heads, stream.spawn("attn"))
    ones = lambda n: Tensor(np.ones(n), requires_grad=True)
    zeros = lambda n: Tensor(np.zeros(n), requires_grad=True)
    w = lambda name, shape: Tensor(
        stream.spawn(name).trunc_normal(0.2, size=shape), requires_grad=True
    )
    block = BlockParams(
        ones(dim), zeros(dim), attn, ones(dim), zeros(dim),
        w("w1", (dim, 2 * hidden)), zeros(2 * hidden), w("w2", (hidden, dim)), zeros(dim),
    )
    if zero_out:
        block.attn.wo.data[:] = 0.0
        block.attn.bo.data[:] = 0.0
        block.ffn_w2.data[:] = 0.0
    return block


class TestBlockForward:
    def test_zero_output_projections_make_identity(self):
        block = make_block(8, 2, 12, seed=0, zero_out=True)
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(1, 6, 8)))
        coords = Tensor(rng.uniform(-1, 1, size=(6, 2)))
        out = block_forward(x, coords, 2, block, RopeSpec(4))
        np.testing.assert_array_equal(out.data, x.data)

    def test_gradient_wrt_input(self):
        block = make_block(8, 2, 12, seed=2)
        rng = np.random.default_rng(3)
        coords = Tensor(rng.uniform(-1, 1, size=(6, 2)))
        probe = Tensor(rng.normal(size=(1, 6, 8)))

        def f(t):
            return tsum(mul(block_forward(t, coords, 2, block, RopeSpec(4)), probe))

        err = grad_check(f, Tensor(rng.normal(size=(1, 6, 8))), 1e-5)
        assert err <= 1e-5


class TestEncoder:
    def test_tiny_shapes(self, tiny_encoder, tiny_images):
        g, d = tiny_encoder(tiny_images, 8)
        assert g.shape == (2, 16) and d.shape == (2, 16, 16)

    def test_base_shapes_at_256(self):
        enc = Encoder(get_preset("base"), seed=0, dtype=np.float32)
        img = np.zeros((1, 3, 256, 256), dtype=np.float32)
        g, d = enc(img, 64)
        assert g.shape == (1, 768) and d.shape == (1, 256, 768)

    def test_default_budget_is_max_cores(self, tiny_encoder, tiny_images):
        g1, _ = tiny_encoder(tiny_images)
        g2, _ = tiny_encoder(tiny_images, 64)
        np.testing.assert_array_equal(g1.data, g2.data)

    def test_invalid_budget_lists_valid_set(self, tiny_encoder, tiny_images):
        with pytest.raises(BudgetError) as err:
            tiny_encoder(tiny_images, 12)
        assert "(8, 16, 24, 32, 40, 48, 56, 64)" in str(err.value)

    def test_inactive_chunk_invariance_bitwise(self, tiny_encoder, tiny_images):
        enc = tiny_encoder
        for budget in enc.config.budgets[:-1]:
            g0, d0 = enc(tiny_images, budget)
            saved = enc.state()
            for j in range(budget // enc.config.chunk, enc.config.max_cores // enc.config.chunk):
                enc.params[f"core.tokens.{j}"].data += 999.0
                enc.params[f"core.coords.{j}"].data *= -3.0
            g1, d1 = enc(tiny_images, budget)
            enc.load_state(saved)
            np.testing.assert_array_equal(g0.data, g1.data)
            np.testing.assert_array_equal(d0.data, d1.data)

    def test_determinism_across_instances(self, tiny_config, tiny_images):
        a = Encoder(tiny_config, seed=3)
        b = Encoder(tiny_config, seed=3)
        ga, da = a(tiny_images, 16)
        gb, db = b(tiny_images, 16)
        np.testing.assert_array_equal(ga.data, gb.data)
        np.testing.assert_array_equal(da.data, db.data)

    def test_core_coordinates_stay_bounded(self, tiny_encoder, tiny_images):
        capture = []
        tiny_encoder(tiny_images, 32, capture=capture)
        assert len(capture) == tiny_encoder.config.layers
        for layer in capture:
            assert np.all(np.abs(layer["coords"][:, :32]) < 1.0)

    def test_token_count_scales_with_resolution(self, tiny_encoder):
        imgs16 = synthetic_images(RngStream(1, "r"), 1, 16)
        imgs32 = synthetic_images(RngStream(1, "r"), 1, 32)
        _, d16 = tiny_encoder(imgs16, 8)
        _, d32 = tiny_encoder(imgs32, 8)
        assert d32.shape[1] == 4 * d16.shape[1]

    def test_coord_jitter_optional_and_off_by_default(self, tiny_config, tiny_images):
        enc = Encoder(tiny_config, seed=4)
        g0, _ = enc(tiny_images, 8)
        g1, _ = enc(tiny_images, 8)
        np.testing.assert_array_equal(g0.data, g1.data)
        gj, _ = enc(tiny_images, 8, coord_jitter_stream=RngStream(0, "jit"))
        assert np.abs(gj.data - g0.data).max() > 0

    def test_state_roundtrip(self, tiny_config, tiny_images):
        a = Encoder(tiny_config, seed=5)
        b = Encoder(tiny_config, seed=6)
        b.load_state(a.state())
        ga, _ = a(tiny_images, 8)
        gb, _ = b(tiny_images, 8)
        np.testing.assert_array_equal(ga.data, gb.data)
