import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from veca.elastic import (
    DEFAULT_BUDGETS,
    DEFAULT_WEIGHTS,
    BudgetDistribution,
    CoreBank,
    active_prefix,
    load_schedule,
    sample_budget,
    save_schedule,
)
from veca.errors import BudgetError, ConfigError
from veca.rng import RngStream
from veca.tensor import Tensor


class TestBudgetDistribution:
    def test_default_distribution(self):
        dist = BudgetDistribution()
        assert dist.budgets == DEFAULT_BUDGETS == (8, 16, 24, 32, 40, 48, 56, 64)
        assert dist.weights == DEFAULT_WEIGHTS == (1, 1, 2, 2, 3, 3, 4, 4)
        np.testing.assert_allclose(dist.probs.sum(), 1.0)
        assert dist.probs[0] == pytest.approx(0.05)
        assert dist.probs[-1] == pytest.approx(0.20)

    def test_validation(self):
        with pytest.raises(ConfigError):
            BudgetDistribution(budgets=(8, 16), weights=(1,))
        with pytest.raises(ConfigError):
            BudgetDistribution(budgets=(8, 12), weights=(1, 1))  # 12 not multiple of 8
        with pytest.raises(ConfigError):
            BudgetDistribution(budgets=(16, 8), weights=(1, 1))
        with pytest.raises(ConfigError):
            BudgetDistribution(budgets=(8, 16), weights=(0, 0))


class TestSampler:
    def test_degenerate_weights(self):
        dist = BudgetDistribution(weights=(0, 0, 0, 0, 0, 0, 0, 1))
        stream = RngStream(0, "deg")
        assert all(sample_budget(dist, stream) == 64 for _ in range(200))

    def test_empirical_frequencies_100k(self):
        dist = BudgetDistribution()
        stream = RngStream(0, "freq")
        counts = dict.fromkeys(dist.budgets, 0)
        n = 100_000
        for _ in range(n):
            counts[sample_budget(dist, stream)] += 1
        assert abs(counts[64] / n - 0.20) <= 0.005
        assert abs(counts[8] / n - 0.05) <= 0.005

    def test_replayable(self):
        dist = BudgetDistribution()
        a = [sample_budget(dist, RngStream(5, "s")) for _ in range(1)]
        draws1 = []
        draws2 = []
        s1, s2 = RngStream(5, "s"), RngStream(5, "s")
        for _ in range(50):
            draws1.append(sample_budget(dist, s1))
            draws2.append(sample_budget(dist, s2))
        assert draws1 == draws2 and draws1[0] == a[0]


class TestSchedule:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "schedule.txt"
        budgets = [8, 64, 32, 32, 16]
        save_schedule(path, budgets)
        assert load_schedule(path) == budgets


def make_bank(chunks=4, chunk=8, dim=16, seed=0):
    stream = RngStream(seed, "bank")
    tokens = [Tensor(stream.spawn(f"t{j}").normal(size=(chunk, dim))) for j in range(chunks)]
    coords = [Tensor(stream.spawn(f"c{j}").normal(size=(chunk, 2))) for j in range(chunks)]
    return CoreBank(tokens, coords)


class TestActivePrefix:
    def test_full_bank(self):
        bank = make_bank()
        tokens, coords = active_prefix(bank, 32)
        np.testing.assert_array_equal(
            tokens.data, np.concatenate([c.data for c in bank.token_chunks])
        )
        assert coords.shape == (32, 2)

    def test_single_chunk(self):
        bank = make_bank()
        tokens, _ = active_prefix(bank, 8)
        np.testing.assert_array_equal(tokens.data, bank.token_chunks[0].data)

    def test_prefix_identity(self):
        bank = make_bank()
        t16, _ = active_prefix(bank, 16)
        t8, _ = active_prefix(bank, 8)
        np.testing.assert_array_equal(t16.data[:8], t8.data)

    @given(
        c1=st.sampled_from([8, 16, 24, 32]),
        c2=st.sampled_from([8, 16, 24, 32]),
        seed=st.integers(0, 50),
    )
    @settings(max_examples=30, deadline=None)
    def test_nesting_exact(self, c1, c2, seed):
        if c1 >= c2:
            return
        bank = make_bank(seed=seed)
        small_t, small_c = active_prefix(bank, c1)
        big_t, big_c = active_prefix(bank, c2)
        np.testing.assert_array_equal(small_t.data, big_t.data[:c1])
        np.testing.assert_array_equal(small_c.data, big_c.data[:c1])

    def test_invalid_budgets(self):
        bank = make_bank()
        for bad in (0, 4, 12, 40):
            with pytest.raises(BudgetError):
                active_prefix(bank, bad)

    def test_bank_validation(self):
        with pytest.raises(ConfigError):
            CoreBank([], [])
        with pytest.raises(ConfigError):
            CoreBank(
                [Tensor(np.zeros((8, 4)))],
                [Tensor(np.zeros((4, 2)))],
            )
