import itertools
import json

import pytest
from hypothesis import given, settings, strategies as st

from qs4d.metrics import (CSV_COLUMNS, compute_ace, compute_adc, compute_mem, compute_metrics,
                          reduction_ratios)
from qs4d.model import Hyper
from qs4d.quant import GROUPS, QuantSpec

TABLE3 = Hyper(N=14, H=3, n_layer=1, n_in=1, n_out=2)
DEPLOYED = QuantSpec.parse("A=4,B=4,C=4,state=8,act=8")


def test_table3_fixtures():
    assert compute_ace(TABLE3, DEPLOYED)["Ax"] == 5376
    assert compute_mem(TABLE3, DEPLOYED)["A"] == 336
    assert compute_adc(TABLE3, DEPLOYED)["kernel"] == 1368


def test_unit_case():
    h = Hyper(1, 1, 1)
    assert compute_ace(h, QuantSpec.homogeneous(1, state_mode="direct-recurrent"), complex_kernel=False)["Ax"] == 1


def test_integers_and_totals():
    r = compute_metrics(TABLE3, DEPLOYED)
    for part in (r.ace, r.mem, r.adc):
        assert all(isinstance(v, int) for v in part.values())
        assert part["total"] == sum(v for k, v in part.items() if k != "total")
    assert "alt_coder" not in r.ace
    assert "alt_coder" in compute_metrics(TABLE3, DEPLOYED, debug=True).ace


def test_halving_a_bits_halves_ax():
    assert compute_ace(TABLE3, QuantSpec(A=4, act=8))["Ax"] * 2 == compute_ace(TABLE3, QuantSpec(A=8, act=8))["Ax"]


def test_zero_width_memory():
    assert compute_mem(TABLE3, QuantSpec(), off_bits=0)["total"] == 0
    assert compute_adc(TABLE3, QuantSpec(), off_bits=0)["mixing"] == 0


def test_fixed_b_costs_no_memory():
    assert compute_mem(TABLE3, DEPLOYED)["B"] == 0
    assert compute_mem(Hyper(14, 3, 1, fixed_b=False), DEPLOYED)["B"] == 336


def test_doubling_h():
    a = compute_mem(Hyper(8, 4, 2), DEPLOYED)
    b = compute_mem(Hyper(8, 8, 2), DEPLOYED)
    assert b["A"] == 2 * a["A"] and b["C"] == 2 * a["C"] and b["linear"] == 4 * a["linear"]


def test_adc_independent_of_a_bits():
    assert compute_adc(TABLE3, DEPLOYED)["total"] == compute_adc(TABLE3, DEPLOYED.with_bits(A=2))["total"]


def test_include_dt():
    assert compute_mem(TABLE3, QuantSpec(dt=8), include_dt=True)["dt"] == 14 * 8 * 3
    assert compute_mem(TABLE3, QuantSpec(dt=8))["dt"] == 0


def test_pruned_kernels_scale_terms():
    h = Hyper(10, 8, 2)
    full = compute_ace(h, DEPLOYED)
    pruned = compute_ace(h, DEPLOYED, kernels=[5, 8])
    per_layer = full["Ax"] // 2
    assert pruned["Ax"] == per_layer * 5 // 8 + per_layer
    with pytest.raises(ValueError):
        compute_ace(h, DEPLOYED, kernels=[9, 8])


def test_reduction_ratio_table3():
    r = reduction_ratios(TABLE3, None, DEPLOYED)
    assert r["ace"] > 11


def test_homogeneous_6bit_ratio():
    assert reduction_ratios(Hyper(64, 128, 4), None, QuantSpec.homogeneous(6))["ace"] > 11


def test_json_and_csv():
    r = compute_metrics(TABLE3, DEPLOYED)
    d = json.loads(r.to_json())
    assert d["ace"]["Ax"] == 5376 and d["assumptions"]["c_ace"] == 4
    row = r.csv_row()
    assert tuple(row) == CSV_COLUMNS and row["ace_Ax"] == 5376


bits = st.integers(1, 16)


@settings(max_examples=200, deadline=None)
@given(N=st.integers(1, 32), H=st.integers(1, 16), L=st.integers(1, 4), g=st.sampled_from(GROUPS),
       b=st.integers(1, 15), base=bits)
def test_monotone_in_bits(N, H, L, g, b, base):
    h = Hyper(N, H, L)
    kw = {"state_mode": "direct-recurrent"}
    lo = QuantSpec(**{**{x: base for x in GROUPS}, g: b}, **kw)
    hi = QuantSpec(**{**{x: base for x in GROUPS}, g: b + 1}, **kw)
    for fn in (compute_ace, compute_mem, compute_adc):
        a, c = fn(h, lo), fn(h, hi)
        assert all(c[k] >= a[k] for k in a)


def test_monotone_in_shape():
    spec = DEPLOYED
    for N, H, L in itertools.product((1, 4), (1, 3), (1, 2)):
        base = compute_metrics(Hyper(N, H, L), spec)
        for bigger in (Hyper(N + 1, H, L), Hyper(N, H + 1, L), Hyper(N, H, L + 1)):
            big = compute_metrics(bigger, spec)
            for p, q in ((base.ace, big.ace), (base.mem, big.mem), (base.adc, big.adc)):
                assert all(q[k] >= p[k] for k in p)
