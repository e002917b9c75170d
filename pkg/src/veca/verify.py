"""Named property suites behind the ``verify`` CLI command.

Each suite runs fixed-seed checks of one module's invariants and returns
(name, passed, detail) triples. ``corrupt=True`` injects a deliberate fault
into the first suite check, as a negative control that the harness can fail.
"""

from __future__ import annotations

import numpy as np
from scipy import stats as sp_stats

from .analysis import influence_probe, score_macs_core
from .attention import AttnParams, core_attention, dense_count, interaction_count, masked_dense_oracle
from .data import synthetic_images
from .distill import DistillConfig, SyntheticTeacher, total_loss
from .elastic import BudgetDistribution, active_prefix, sample_budget
from .errors import VecaError
from .model import Encoder, ModelConfig, get_preset
from .rng import RngStream
from .rope import RopeSpec, cos_sin, fps_init, patch_grid
from .rope import apply as rope_apply
from .tensor import Tensor, grad_check, mul, reshape, silu, softmax_rows, tanh, tsum

Check = tuple[str, bool, str]


def _tiny_encoder(seed: int) -> Encoder:
    return Encoder(get_preset("tiny-test"), seed=seed)


def suite_attention(seed: int = 0, corrupt: bool = False) -> list[Check]:
    checks: list[Check] = []
    worst = 0.0
    rng = np.random.default_rng(seed)
    cases = 0
    for trial in range(50):
        b = int(rng.integers(1, 3))
        heads = int(rng.choice([1, 2]))
        dim = int(rng.choice([8, 16]))
        c = int(rng.choice([2, 4, 8]))
        t = int(rng.integers(c + 1, 33))
        params = AttnParams.init(dim, heads, RngStream(seed * 1000 + trial, "attn"))
        x = Tensor(rng.normal(size=(b, t, dim)))
        coords = Tensor(rng.uniform(-1, 1, size=(t, 2)))
        spec = RopeSpec(dim // heads)
        out = core_attention(params, x, coords, c, spec).data
        if corrupt and trial == 0:
            out = out + 1e-3
        ref = masked_dense_oracle(params, x, coords, c, spec)
        worst = max(worst, float(np.abs(out - ref).max()))
        cases += 1
    checks.append(
        ("oracle equivalence (50 random configs)", worst <= 1e-12, f"max |diff| = {worst:.2e}")
    )

    capture: dict = {}
    params = AttnParams.init(16, 2, RngStream(seed, "cap"))
    x = Tensor(np.random.default_rng(seed + 1).normal(size=(2, 20, 16)))
    coords = Tensor(np.random.default_rng(seed + 2).uniform(-1, 1, size=(20, 2)))
    core_attention(params, x, coords, 4, RopeSpec(8), capture=capture)
    sums = np.concatenate(
        [capture["probs_core"].sum(-1).ravel(), capture["probs_patch"].sum(-1).ravel()]
    )
    err = float(np.abs(sums - 1).max())
    checks.append(("attention rows sum to 1", err <= 1e-6, f"max |sum-1| = {err:.2e}"))

    # permuting patches together with their coordinates permutes outputs
    rng = np.random.default_rng(seed + 3)
    c, n = 4, 9
    xp = rng.normal(size=(1, c + n, 16))
    cp = rng.uniform(-1, 1, size=(c + n, 2))
    perm = rng.permutation(n)
    x2 = xp.copy()
    c2 = cp.copy()
    x2[0, c:] = xp[0, c + perm]
    c2[c:] = cp[c + perm]
    out1 = core_attention(params, Tensor(xp), Tensor(cp), c, RopeSpec(8)).data
    out2 = core_attention(params, Tensor(x2), Tensor(c2), c, RopeSpec(8)).data
    diff = max(
        float(np.abs(out2[0, c:] - out1[0, c + perm]).max()),
        float(np.abs(out2[0, :c] - out1[0, :c]).max()),
    )
    checks.append(("patch permutation equivariance", diff <= 1e-12, f"max |diff| = {diff:.2e}"))

    ok = all(
        interaction_count(n, c) < dense_count(n)
        for c in (2, 8, 64)
        for n in (3 * c, 4 * c, 100 * c)
    )
    checks.append(("2NC+C^2 < N^2 whenever N >= 3C", ok, "checked C in {2,8,64}"))
    return checks


def suite_rope(seed: int = 0, corrupt: bool = False) -> list[Check]:
    checks: list[Check] = []
    rng = np.random.default_rng(seed)
    spec = RopeSpec(8)
    worst_iso = 0.0
    worst_shift = 0.0
    for trial in range(100):
        q = Tensor(rng.normal(size=(1, 1, 3, 8)))
        k = Tensor(rng.normal(size=(1, 1, 3, 8)))
        coords = rng.uniform(-1, 1, size=(1, 3, 2))
        shift = rng.uniform(-0.5, 0.5, size=2)

        def rotated_dots(cc: np.ndarray) -> np.ndarray:
            ct, st = cos_sin(spec, Tensor(cc))
            ct = reshape(ct, (1, 1, 3, 4))
            st = reshape(st, (1, 1, 3, 4))
            qq = rope_apply(q, ct, st).data
            kk = rope_apply(k, ct, st).data
            return np.einsum("bhtd,bhsd->bhts", qq, kk)

        ct, st = cos_sin(spec, Tensor(coords))
        qr = rope_apply(q, reshape(ct, (1, 1, 3, 4)), reshape(st, (1, 1, 3, 4))).data
        if corrupt and trial == 0:
            qr = qr * 1.001
        iso = np.abs(
            np.linalg.norm(qr, axis=-1) - np.linalg.norm(q.data, axis=-1)
        ).max()
        worst_iso = max(worst_iso, float(iso))
        worst_shift = max(
            worst_shift,
            float(np.abs(rotated_dots(coords) - rotated_dots(coords - shift)).max()),
        )
    checks.append(("rotation isometry (100 draws)", worst_iso <= 1e-6, f"max = {worst_iso:.2e}"))
    checks.append(
        ("translation invariance of logits (100 draws)", worst_shift <= 1e-6, f"max = {worst_shift:.2e}")
    )

    grid = patch_grid(3, 5)
    flipped = patch_grid(3, 5).reshape(3, 5, 2)[:, ::-1].reshape(-1, 2)
    refl = bool(np.array_equal(flipped[:, 0], -grid[:, 0]) and np.array_equal(flipped[:, 1], grid[:, 1]))
    checks.append(("patch grid x-reflection", refl, "column flip negates x exactly"))

    enc = _tiny_encoder(seed)
    capture: list[dict] = []
    img = synthetic_images(RngStream(seed, "rope-img"), 1, 16)
    enc.forward(img, 16, capture=capture)
    core_ok = all(
        np.all(np.abs(layer["coords"][:, :16, :]) < 1.0) for layer in capture
    )
    checks.append(("core coordinates in (-1,1) at every layer", core_ok, f"{len(capture)} layers"))

    same = np.array_equal(fps_init(16, 16), fps_init(16, 16))
    pts = np.tanh(fps_init(64, 64))
    fps_min = np.min(
        [np.linalg.norm(pts[i] - pts[j]) for i in range(64) for j in range(i + 1, 64)]
    )
    rng = np.random.default_rng(seed)
    lattice = patch_grid(64, 64)
    beats = 0
    for _ in range(100):
        subset = lattice[rng.choice(64 * 64, size=64, replace=False)]
        dmat = np.linalg.norm(subset[:, None] - subset[None, :], axis=-1)
        np.fill_diagonal(dmat, np.inf)
        if fps_min >= dmat.min():
            beats += 1
    checks.append(
        ("farthest-point init deterministic and well-spread", same and beats == 100,
         f"min pairwise dist {fps_min:.3f} beats {beats}/100 random subsets")
    )
    return checks


def suite_gradients(seed: int = 0, corrupt: bool = False) -> list[Check]:
    checks: list[Check] = []
    rng = np.random.default_rng(seed)

    worst = 0.0
    for trial in range(20):
        v = Tensor(rng.normal(size=(3, 4)))

        def f(t: Tensor) -> Tensor:
            return tsum(mul(softmax_rows(mul(t, t)), tanh(silu(t))))

        worst = max(worst, grad_check(f, v, 1e-5))
    if corrupt:
        worst += 1.0
    checks.append(
        ("primitive-op gradients (20 seeds)", worst <= 1e-6, f"max rel err = {worst:.2e}")
    )

    # one-block model: 8 patches on a 2x4 grid, C=8, D=16
    cfg = ModelConfig(layers=1, dim=16, heads=2, mlp_ratio=2.67, patch_size=4)
    enc = Encoder(cfg, seed=seed)
    teacher = SyntheticTeacher(cfg, seed=seed + 500)
    images = synthetic_images(RngStream(seed, "gc-data"), 1, 16)[:, :, :8, :]
    err = model_grad_check(enc, teacher, images, budget=8, h=1e-5)
    checks.append(("one-block forward+loss gradient", err <= 1e-4, f"max rel err = {err:.2e}"))
    return checks


def model_grad_check(
    enc: Encoder, teacher, images: np.ndarray, budget: int, h: float = 1e-5
) -> float:
    """Full-model finite-difference check of d(total loss)/d(every parameter).

    Perturbs each parameter coordinate in place by +-h with the tape disabled
    and compares against the recorded backward pass, using the same error
    metric as :func:`veca.tensor.grad_check`.
    """
    cfg = DistillConfig()
    targets = teacher.targets(images)

    def loss_value() -> float:
        loss, _ = total_loss(images, budget, enc, teacher, cfg, targets=targets)
        return float(loss.data)

    enc.zero_grad()
    loss, _ = total_loss(images, budget, enc, teacher, cfg, targets=targets)
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in enc.params.items()
    }

    for p in enc.params.values():
        p.requires_grad = False
    worst = 0.0
    try:
        for name, p in enc.params.items():
            flat = p.data.reshape(-1)
            ana = analytic[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_value()
                flat[i] = orig - h
                down = loss_value()
                flat[i] = orig
                num = (up - down) / (2.0 * h)
                worst = max(worst, abs(ana[i] - num) / max(1.0, abs(ana[i])))
    finally:
        for p in enc.params.values():
            p.requires_grad = True
    return worst


def suite_elastic(seed: int = 0, corrupt: bool = False) -> list[Check]:
    checks: list[Check] = []
    enc = _tiny_encoder(seed)
    bank = enc.core_bank
    nested = True
    for c1 in enc.config.budgets:
        for c2 in enc.config.budgets:
            if c1 >= c2:
                continue
            t1, r1 = active_prefix(bank, c1)
            t2, r2 = active_prefix(bank, c2)
            nested &= np.array_equal(t1.data, t2.data[:c1]) and np.array_equal(
                r1.data, r2.data[:c1]
            )
    checks.append(("prefix nesting exact", nested, "all budget pairs"))

    img = synthetic_images(RngStream(seed, "elastic-img"), 2, 16)
    invariant = True
    for c in enc.config.budgets[:-1]:
        g0, d0 = enc(img, c)
        saved = enc.state()
        start = c // enc.config.chunk
        for j in range(start, enc.config.max_cores // enc.config.chunk):
            enc.params[f"core.tokens.{j}"].data += 123.4
            enc.params[f"core.coords.{j}"].data -= 7.0
        g1, d1 = enc(img, c)
        if corrupt and c == enc.config.budgets[0]:
            enc.params["core.tokens.0"].data += 1e-4
            g1, d1 = enc(img, c)
        enc.load_state(saved)
        invariant &= np.array_equal(g0.data, g1.data) and np.array_equal(d0.data, d1.data)
    checks.append(("inactive-core perturbation leaves outputs bit-identical", invariant, "budgets 8..56"))

    dist = BudgetDistribution()
    crit = float(sp_stats.chi2.isf(1e-3, df=len(dist.budgets) - 1))
    draws = 100_000
    max_dev = 0.0
    max_stat = 0.0
    for s in range(5):
        stream = RngStream(seed * 10 + s, "budget-sampler")
        counts = dict.fromkeys(dist.budgets, 0)
        for _ in range(draws):
            counts[sample_budget(dist, stream)] += 1
        freqs = np.array([counts[b] / draws for b in dist.budgets])
        max_dev = max(max_dev, float(np.abs(freqs - dist.probs).max()))
        expected = dist.probs * draws
        observed = np.array([counts[b] for b in dist.budgets])
        max_stat = max(max_stat, float(((observed - expected) ** 2 / expected).sum()))
    checks.append(
        ("sampler frequencies within 0.005 of p_C (5 streams)", max_dev <= 0.005, f"max dev = {max_dev:.4f}")
    )
    checks.append(
        ("chi^2 goodness of fit at 1e-3 (5 streams)", max_stat < crit, f"max stat {max_stat:.2f} < {crit:.2f}")
    )
    return checks


def suite_diameter(seed: int = 0, corrupt: bool = False) -> list[Check]:
    checks: list[Check] = []
    one_max = 0.0
    frac_min = 1.0
    for s in range(2):
        enc = _tiny_encoder(seed + s)
        img = synthetic_images(RngStream(seed + s, "probe"), 1, 16)[0]
        j1 = influence_probe(enc, img, 1)
        j2 = influence_probe(enc, img, 2)
        if corrupt and s == 0:
            j1 = j1 + 1e-6
        off = ~np.eye(j1.shape[0], dtype=bool)
        one_max = max(one_max, float(j1[off].max()))
        frac_min = min(frac_min, float((j2[off] > 1e-9).mean()))
    checks.append(("one-block cross-patch influence is zero", one_max <= 1e-12, f"max = {one_max:.2e}"))
    checks.append((
        "two-block cross-patch influence present (>=90% of pairs)",
        frac_min >= 0.9,
        f"min fraction = {frac_min:.3f}",
    ))

    config = get_preset("small")
    linked = all(
        score_macs_core(n, c, config.dim) == config.dim * interaction_count(n, c)
        for n in (64, 256, 1024)
        for c in (8, 64)
    )
    checks.append(("score MACs equal D*(2NC+C^2)", linked, "cost model matches interaction count"))
    return checks


SUITES = {
    "attention": suite_attention,
    "rope": suite_rope,
    "gradients": suite_gradients,
    "elastic": suite_elastic,
    "diameter": suite_diameter,
}


def run_suites(names: list[str], seed: int = 0, corrupt: bool = False) -> tuple[bool, list[str]]:
    """Run suites and return (all_passed, printable report lines)."""
    lines: list[str] = []
    all_ok = True
    for name in names:
        if name not in SUITES:
            raise VecaError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
        for check, ok, detail in SUITES[name](seed=seed, corrupt=corrupt):
            all_ok &= ok
            lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {check} ({detail})")
    return all_ok, lines
