import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qs4d.kernel import (DiscreteKernel, KernelParams, conv_apply, conv_direct, conv_kernel, discretize_zoh,
                         imssa_scan, kernel_step, materialize_conv_kernel, real_projection, scan, zoh)

from conftest import random_discrete, random_kernel


def test_zoh_scalar_value():
    # a = -1, dt = ln 2: a_bar = 1/2, b_bar = (1/2 - 1) / -1 = 1/2
    a_bar, b_bar = zoh(-1.0 + 0j, np.log(2.0), 1.0)
    assert a_bar == pytest.approx(0.5, abs=1e-15)
    assert b_bar == pytest.approx(0.5, abs=1e-15)


def test_zoh_zero_a_limit():
    a_bar, b_bar = zoh(0j, 0.1, 2.0)
    assert a_bar == 1.0
    assert b_bar == pytest.approx(0.2)
    # continuity just above the threshold
    _, b_near = zoh(-1e-7 + 0j, 0.1, 2.0)
    assert abs(b_near - 0.2) < 1e-8


def test_from_continuous_roundtrip(rng):
    p = random_kernel(rng, N=6)
    q = KernelParams.from_continuous(p.a, p.b, p.c, p.dt, p.d)
    np.testing.assert_allclose(q.a, p.a, rtol=1e-14)
    assert q.dt == pytest.approx(p.dt)


def test_from_continuous_rejects_unstable():
    with pytest.raises(ValueError):
        KernelParams.from_continuous([0.1 + 1j], [1], [1], 0.1)
    with pytest.raises(ValueError):
        KernelParams.from_continuous([-0.1 + 1j], [1], [1], 0.0)


def test_empty_state_rejected():
    with pytest.raises(ValueError):
        KernelParams(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), 0.0)


def test_real_projection():
    assert real_projection(np.array([1 + 1j]), np.array([2 - 1j])) == pytest.approx(2 * 3.0)


def test_step_shapes_and_errors(rng):
    k = random_discrete(rng, N=3)
    x, y = kernel_step(k, np.zeros(3), 1.0)
    np.testing.assert_allclose(x, k.b_bar)
    assert y == pytest.approx(2 * np.real(np.sum(k.c_bar * k.b_bar)))
    with pytest.raises(ValueError):
        kernel_step(k, np.zeros(4), 1.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_step_overflow_raises():
    k = DiscreteKernel(np.array([1e200 + 0j]), np.array([1.0 + 0j]), np.array([1.0 + 0j]))
    with pytest.raises(FloatingPointError):
        scan(k, np.ones(4), x0=np.array([1e200 + 0j]))


def test_impulse_response_is_conv_kernel(rng):
    k = random_discrete(rng, N=5)
    u = np.zeros(32)
    u[0] = 1.0
    np.testing.assert_allclose(scan(k, u), materialize_conv_kernel(k, 32), atol=1e-12)


def test_imssa_is_one_step_delay(rng):
    k = random_discrete(rng, N=5)
    u = rng.normal(size=50)
    y = scan(k, u)
    y_imssa = imssa_scan(k, u)
    assert y_imssa[0] == 0.0
    np.testing.assert_allclose(y_imssa[1:], y[:-1], atol=1e-12)


def test_imssa_feedthrough():
    k = DiscreteKernel(np.array([0.5 + 0j]), np.array([1 + 0j]), np.array([0j]), d_bar=2.0)
    np.testing.assert_allclose(imssa_scan(k, [1.0, 3.0]), [2.0, 6.0])


def test_conv_kernel_broadcasts(rng):
    ks = [random_discrete(rng, N=3) for _ in range(4)]
    bank = conv_kernel(np.stack([k.a_bar for k in ks]), np.stack([k.b_bar for k in ks]),
                       np.stack([k.c_bar for k in ks]), 20)
    assert bank.shape == (4, 20)
    for row, k in zip(bank, ks):
        np.testing.assert_allclose(row, materialize_conv_kernel(k, 20))


def test_conv_apply_matches_direct(rng):
    K = rng.normal(size=(3, 64))
    u = rng.normal(size=(2, 3, 64))
    np.testing.assert_allclose(conv_apply(K, u), conv_direct(K, u), atol=1e-12)


def test_conv_length_mismatch():
    with pytest.raises(ValueError):
        conv_apply(np.ones(4), np.ones(5))


def test_conv_kernel_needs_positive_length(rng):
    k = random_discrete(rng)
    with pytest.raises(ValueError):
        materialize_conv_kernel(k, 0)


@settings(max_examples=40, deadline=None)
@given(N=st.integers(1, 8), L=st.integers(1, 80), seed=st.integers(0, 10_000))
def test_recurrent_equals_convolution(N, L, seed):
    rng = np.random.default_rng(seed)
    k = random_discrete(rng, N=N, dt=rng.uniform(1e-3, 0.2))
    u = rng.normal(size=L)
    y_rec = scan(k, u)
    y_conv = conv_apply(materialize_conv_kernel(k, L), u) + k.d_bar * u
    np.testing.assert_allclose(y_conv, y_rec, atol=1e-9 * (1 + np.max(np.abs(y_rec))))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(-3, 3))
def test_linearity(seed, scale):
    rng = np.random.default_rng(seed)
    k = random_discrete(rng, N=3)
    u, v = rng.normal(size=(2, 16))
    np.testing.assert_allclose(scan(k, scale * u + v), scale * scan(k, u) + scan(k, v), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_zoh_stability(seed):
    rng = np.random.default_rng(seed)
    p = random_kernel(rng, N=4, dt=rng.uniform(1e-4, 1.0))
    k = discretize_zoh(p)
    assert np.all(np.abs(k.a_bar) < 1.0)
