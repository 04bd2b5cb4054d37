"""Hardware cost metrics: ACE (single-bit MAC equivalents), parameter memory, ADC bits.

Everything is exact integer arithmetic. Groups that are not quantized count
at the float reference width (32 bits by default).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .model import Hyper
from .quant import QuantSpec

FLOAT_BITS = 32
ACE_COMPLEX = 4
MEM_COMPLEX = 2
ADC_COMPLEX = 4

CSV_COLUMNS = ("ace_Ax", "ace_Bu", "ace_Cx", "ace_linear", "ace_coder", "ace_total",
               "mem_A", "mem_B", "mem_C", "mem_linear", "mem_coder", "mem_dt", "mem_total",
               "adc_kernel", "adc_mixing", "adc_coder", "adc_total")


@dataclass
class MetricsReport:
    ace: dict
    mem: dict
    adc: dict
    assumptions: dict = field(default_factory=dict)

    @property
    def ace_total(self) -> int:
        return self.ace["total"]

    @property
    def mem_bits(self) -> int:
        return self.mem["total"]

    @property
    def adc_total(self) -> int:
        return self.adc["total"]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def csv_row(self) -> dict:
        row = {}
        for prefix, part in (("ace", self.ace), ("mem", self.mem), ("adc", self.adc)):
            for k, v in part.items():
                if not k.startswith("alt"):
                    row[f"{prefix}_{k}"] = v
        return {k: row.get(k, 0) for k in CSV_COLUMNS}


def _bits(spec: Optional[QuantSpec], off: int) -> dict:
    spec = spec or QuantSpec()
    return {g: spec.bits(g, off) for g in ("A", "B", "C", "dt", "state", "act", "linear", "coder")}


def _kernels(hyper: Hyper, kernels: Optional[Sequence[int]]):
    if kernels is None:
        return [hyper.H] * hyper.n_layer
    kernels = [int(k) for k in kernels]
    if len(kernels) != hyper.n_layer or any(k < 0 or k > hyper.H for k in kernels):
        raise ValueError("kernels per layer must list n_layer counts in [0, H]")
    return kernels


def compute_ace(hyper: Hyper, spec: Optional[QuantSpec] = None, kernels=None, *,
                complex_kernel: bool = True, off_bits: int = FLOAT_BITS) -> dict:
    """ACE terms; ``kernels`` lists surviving kernels per layer after structural pruning."""
    r = _bits(spec, off_bits)
    c = ACE_COMPLEX if complex_kernel else 1
    ks = _kernels(hyper, kernels)
    N, H = hyper.N, hyper.H
    out = {
        "Ax": sum(c * N * r["A"] * r["act"] * k for k in ks),
        "Bu": sum(c * N * r["B"] * r["act"] * k for k in ks),
        "Cx": sum(c * N * r["C"] * r["act"] * k for k in ks),
        "linear": sum(H * k * r["act"] * r["linear"] for k in ks),
        "coder": H * (hyper.n_in + hyper.n_out) * r["act"] * r["coder"],
    }
    out["total"] = sum(out.values())
    out["alt_coder"] = H * hyper.n_in + hyper.n_out * r["act"] * r["coder"]
    return out


def compute_mem(hyper: Hyper, spec: Optional[QuantSpec] = None, kernels=None, *,
                complex_kernel: bool = True, include_dt: bool = False, off_bits: int = FLOAT_BITS) -> dict:
    """Parameter memory in bits. A fixed (untrained) B costs nothing; C carries no complex factor."""
    r = _bits(spec, off_bits)
    c = MEM_COMPLEX if complex_kernel else 1
    ks = _kernels(hyper, kernels)
    N, H = hyper.N, hyper.H
    out = {
        "A": sum(c * N * r["A"] * k for k in ks),
        "B": 0 if hyper.fixed_b else sum(c * N * r["B"] * k for k in ks),
        "C": sum(N * r["C"] * k for k in ks),
        "linear": sum(H * k * r["linear"] for k in ks),
        "coder": H * (hyper.n_in + hyper.n_out) * r["coder"],
        "dt": sum(N * r["dt"] * k for k in ks) if include_dt else 0,
    }
    out["total"] = sum(out.values())
    out["alt_coder"] = H * hyper.n_in + hyper.n_out * r["coder"]
    return out


def compute_adc(hyper: Hyper, spec: Optional[QuantSpec] = None, kernels=None, *,
                complex_kernel: bool = True, off_bits: int = FLOAT_BITS) -> dict:
    r = _bits(spec, off_bits)
    c = ADC_COMPLEX if complex_kernel else 1
    ks = _kernels(hyper, kernels)
    out = {
        "kernel": sum((c * hyper.N * r["state"] + r["act"]) * k for k in ks),
        "mixing": r["act"] * hyper.H * hyper.n_layer,
        "coder": r["act"] * (hyper.H + hyper.n_out),
    }
    out["total"] = sum(out.values())
    return out


def compute_metrics(hyper: Hyper, spec: Optional[QuantSpec] = None, kernels=None, *,
                    complex_kernel: bool = True, include_dt: bool = False, off_bits: int = FLOAT_BITS,
                    debug: bool = False) -> MetricsReport:
    ace = compute_ace(hyper, spec, kernels, complex_kernel=complex_kernel, off_bits=off_bits)
    mem = compute_mem(hyper, spec, kernels, complex_kernel=complex_kernel,
                      include_dt=include_dt, off_bits=off_bits)
    adc = compute_adc(hyper, spec, kernels, complex_kernel=complex_kernel, off_bits=off_bits)
    if not debug:
        ace.pop("alt_coder")
        mem.pop("alt_coder")
    assumptions = {
        "c_ace": ACE_COMPLEX if complex_kernel else 1,
        "c_mem": MEM_COMPLEX if complex_kernel else 1,
        "c_adc": ADC_COMPLEX if complex_kernel else 1,
        "off_bits": off_bits,
        "bits": _bits(spec, off_bits),
        "kernels_per_layer": _kernels(hyper, kernels),
        "hyper": asdict(hyper),
        "include_dt": include_dt,
        "coder_term": "H*(n_in+n_out)*r_act*r_coder",
    }
    return MetricsReport(ace, mem, adc, assumptions)


def reduction_ratios(hyper: Hyper, reference: Optional[QuantSpec], target: QuantSpec, kernels=None) -> dict:
    """Metric ratios reference / target (floats, for reporting only)."""
    a = compute_metrics(hyper, reference, kernels)
    b = compute_metrics(hyper, target, kernels)
    return {
        "ace": a.ace_total / b.ace_total,
        "mem": a.mem_bits / b.mem_bits,
        "adc": a.adc_total / b.adc_total,
    }
