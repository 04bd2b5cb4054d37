import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qs4d.model import Hyper, discretize_layer, init_model
from qs4d.quant import (GROUPS, QuantSpec, apply_ptq, n_levels_for, quantize, quantize_kernel_common,
                        quantize_last_axis, quantize_per_sample, quantize_tensor, quantize_transition, round_half_away,
                        state_quantization_bits)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_levels():
    assert [n_levels_for(b) for b in (1, 2, 3, 4, 8)] == [1, 1, 3, 7, 127]
    with pytest.raises(ValueError):
        n_levels_for(0)


def test_round_half_away():
    np.testing.assert_array_equal(round_half_away(np.array([0.5, -0.5, 1.5, -2.5, 0.49])),
                                  [1.0, -1.0, 2.0, -3.0, 0.0])


def test_known_grid():
    # 3 bits: 3 levels per side of max 1.0 -> step 1/3
    q = quantize_tensor(np.array([1.0, 0.5, 0.1, -0.2, -1.0]), 3)
    np.testing.assert_allclose(q.values, [1.0, 2 / 3, 0.0, -1 / 3, -1.0])
    assert q.f_scale == 1.0 and q.n_levels == 3


def test_one_bit_grid_is_ternary():
    q = quantize(np.array([0.3, -2.0, 1.1, 0.0]), 1)
    np.testing.assert_allclose(q, [0.0, -2.0, 2.0, 0.0])


def test_zero_tensor_unchanged():
    z = np.zeros(5)
    np.testing.assert_array_equal(quantize(z, 4), z)


def test_none_passes_through():
    x = np.array([0.123])
    assert quantize(x, None) is x


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        quantize(np.array([1.0, np.nan]), 4)


def test_complex_split():
    x = np.array([1.0 + 0.1j, 0.2 - 1.0j])
    q = quantize(x, 2)
    np.testing.assert_allclose(q, [1.0 + 0j, 0.0 - 1.0j])


def test_per_sample_scales():
    x = np.array([[1.0, 0.4], [10.0, 4.0]])
    q = quantize_per_sample(x, 2)
    np.testing.assert_allclose(q, [[1.0, 0.0], [10.0, 0.0]])
    q = quantize_per_sample(x, 3)
    np.testing.assert_allclose(q, [[1.0, 1 / 3], [10.0, 10 / 3]])


def test_last_axis_scales():
    x = np.array([[1.0, 0.6], [0.0, 0.0]])
    np.testing.assert_allclose(quantize_last_axis(x, 2), [[1.0, 1.0], [0.0, 0.0]])


@settings(max_examples=300, deadline=None)
@given(x=arrays(np.float64, st.integers(1, 40), elements=finite), bits=st.integers(1, 16))
def test_grid_properties(x, bits):
    q = quantize_tensor(x, bits)
    n = n_levels_for(bits)
    f = np.max(np.abs(x))
    # idempotent bitwise: the max element maps to exactly f, so the scale is reproduced
    q2 = quantize_tensor(q.values, bits)
    assert q2.f_scale == q.f_scale
    np.testing.assert_array_equal(q2.values, q.values)
    if f > 0:
        assert np.max(np.abs(q.values - x)) <= f / (2 * n) * (1 + 1e-12)
        steps = np.round(q.values * n / f)
        assert len(np.unique(steps)) <= 2 * n + 1
        order = np.argsort(x, kind="stable")
        assert np.all(np.diff(q.values[order]) >= 0)


def test_spec_parse_and_describe():
    s = QuantSpec.parse("A=4, state=8, mixing=6")
    assert (s.A, s.state, s.linear, s.B) == (4, 8, 6, None)
    assert s.describe() == "A=4,state=8,linear=6"
    assert QuantSpec.parse("all=6").bits("coder") == 6
    assert QuantSpec().is_off


def test_spec_rejects_bad_values():
    with pytest.raises(ValueError):
        QuantSpec.parse("Q=4")
    with pytest.raises(ValueError):
        QuantSpec(A=0)
    with pytest.raises(ValueError):
        QuantSpec(state=5)
    with pytest.raises(ValueError):
        QuantSpec(A=4, common_kernel_scale=True)


def test_homogeneous_rounds_odd_state_up():
    s = QuantSpec.homogeneous(5)
    assert s.state == 6 and all(getattr(s, g) == 5 for g in GROUPS if g != "state")
    assert QuantSpec.homogeneous(5, state_mode="direct-recurrent").state == 5


def test_spec_dict_roundtrip():
    s = QuantSpec.parse("A=4,B=4,C=4,state=8,act=8", kernel_domain="discrete", common_kernel_scale=True)
    assert QuantSpec.from_dict(s.to_dict()) == s


def test_state_bits_split():
    assert state_quantization_bits(8) == (4, 4)
    assert state_quantization_bits(None) == (None, None)
    assert state_quantization_bits(7, "direct-recurrent") == 7
    with pytest.raises(ValueError):
        state_quantization_bits(7)


def test_ptq_off_is_identity():
    m = init_model(Hyper(4, 2, 1), 0)
    assert apply_ptq(m, QuantSpec()) is m


def test_ptq_at_32_bits_is_tiny_change():
    m = init_model(Hyper(8, 3, 2), 1)
    q = apply_ptq(m, QuantSpec.homogeneous(32))
    for a, b in zip(m.layers, q.layers):
        np.testing.assert_allclose(b.c, a.c, atol=1e-8)
        np.testing.assert_allclose(b.mix_w, a.mix_w, atol=1e-8)


def test_ptq_snaps_to_grid():
    m = init_model(Hyper(8, 3, 1), 2)
    q = apply_ptq(m, QuantSpec(C=3, linear=2))
    c = q.layers[0].c
    f = np.max(np.abs(m.layers[0].c.real))
    assert set(np.round(c.real * 3 / f, 9).ravel().tolist()) <= {-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0}
    assert len(np.unique(q.layers[0].mix_w)) <= 3


def test_discrete_domain_sets_deployed_kernels():
    m = init_model(Hyper(6, 3, 1), 3)
    spec = QuantSpec.parse("A=4,B=4,C=4", kernel_domain="discrete", common_kernel_scale=True)
    q = apply_ptq(m, spec)
    a_bar, b_bar, c_bar = q.layers[0].deployed
    raw = discretize_layer(m.layers[0])
    for j in range(3):
        parts = [p[j] for p in raw]
        f = max(np.max(np.abs(p.real)) for p in parts)
        f = max(f, max(np.max(np.abs(p.imag)) for p in parts))
        for p in (a_bar[j], b_bar[j], c_bar[j]):
            for v in (p.real, p.imag):
                k = v * 7 / f
                np.testing.assert_allclose(k, np.round(k), atol=1e-9)


def test_common_kernel_scale_matches_helper(rng):
    a, b, c = (rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3)) for _ in range(3))
    spec = QuantSpec.parse("A=4,B=4,C=4", kernel_domain="discrete", common_kernel_scale=True)
    qa, qb, qc = quantize_kernel_common(a, b, c, spec)
    f = np.max(np.abs(np.concatenate([a.real, b.real, c.real, a.imag, b.imag, c.imag], axis=1)), axis=1)
    assert np.max(np.abs(qa - a).max(axis=1) / f) <= 1 / 14 * np.sqrt(2) + 1e-12


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**31), bits=st.integers(1, 8), common=st.booleans())
def test_snapped_transition_stays_stable(seed, bits, common):
    rng = np.random.default_rng(seed)
    r = 1.0 - 10.0 ** rng.uniform(-4, -0.5, (3, 6))
    a_bar = r * np.exp(1j * rng.uniform(-np.pi, np.pi, (3, 6)))
    if common:
        b_bar = rng.normal(size=(3, 6)) * 0.1 + 0j
        c_bar = rng.normal(size=(3, 6)) + 1j * rng.normal(size=(3, 6))
        spec = QuantSpec(A=bits, B=bits, C=bits, kernel_domain="discrete", common_kernel_scale=True)
        q = quantize_kernel_common(a_bar, b_bar, c_bar, spec)[0]
    else:
        q = quantize_transition(a_bar, bits)
    assert np.all(np.abs(q) < 1.0)


def test_transition_truncates_only_when_needed():
    # scales 0.9 (re) and 0.6 (im); 0.85+0.5j rounds to 0.9+0.514j, outside the circle
    a = np.array([0.9 + 0.0j, 0.6j, 0.85 + 0.5j])
    q = quantize_transition(a, 4)
    np.testing.assert_allclose(q[:2], quantize(a, 4)[:2])
    assert abs(quantize(a, 4)[2]) > 1
    np.testing.assert_allclose(q[2], 6 / 7 * 0.9 + 5j / 7 * 0.6)
