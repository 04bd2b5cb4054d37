import numpy as np
import pytest

from qs4d.noise import NoiseSpec, inject_weight_noise, perturb_tensor


def test_zero_sigma_unchanged():
    p = {"A": np.ones(3), "B": np.ones(3)}
    out = inject_weight_noise(p, NoiseSpec(0.0), np.random.default_rng(0))
    assert all(np.array_equal(out[k], p[k]) for k in p)


def test_seeded_repeatable_and_no_mutation():
    p = {"A": np.linspace(-1, 1, 5) + 0.5j, "C": np.arange(4.0)}
    keep = {k: v.copy() for k, v in p.items()}
    a = inject_weight_noise(p, NoiseSpec(0.1), np.random.default_rng(3))
    b = inject_weight_noise(p, NoiseSpec(0.1), np.random.default_rng(3))
    assert all(np.array_equal(a[k], b[k]) for k in p)
    assert all(np.array_equal(p[k], keep[k]) for k in p)


def test_targets_respected():
    p = {"A": np.ones(3), "B": np.ones(3), "C": np.ones(3)}
    out = inject_weight_noise(p, NoiseSpec(0.5, ("C",)), np.random.default_rng(0))
    assert np.array_equal(out["A"], p["A"]) and not np.array_equal(out["C"], p["C"])


def test_empirical_std():
    w = np.zeros(1_000_000)
    w[0] = 2.0
    noisy = perturb_tensor(w, 0.05, np.random.default_rng(11))
    std = np.std(noisy[1:])
    assert abs(std - 0.1) / 0.1 < 0.01


def test_validation():
    with pytest.raises(ValueError):
        NoiseSpec(-0.1)
    with pytest.raises(ValueError):
        NoiseSpec(0.1, ("D",))
    with pytest.raises(ValueError):
        NoiseSpec(0.1, when="sometimes")
