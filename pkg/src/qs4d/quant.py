"""Symmetric max-abs quantization grid, quantization specs and PTQ."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional

import numpy as np

GROUPS = ("A", "B", "C", "dt", "state", "act", "linear", "coder")
# accepted spellings on the command line / in config files
GROUP_ALIASES = {
    "a": "A", "b": "B", "c": "C",
    "dt": "dt", "delta": "dt",
    "state": "state", "act": "act", "activations": "act",
    "linear": "linear", "mixing": "linear",
    "coder": "coder", "en-/decoder": "coder", "decoder": "coder", "encoder": "coder",
}
STATE_MODES = ("indirect-conv", "direct-recurrent")
KERNEL_DOMAINS = ("continuous", "discrete")
MAX_BITS = 32


def n_levels_for(bits: int) -> int:
    if bits < 1:
        raise ValueError(f"bits must be >= 1, got {bits}")
    return 1 if bits == 1 else 2 ** (bits - 1) - 1


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantizedTensor:
    values: np.ndarray
    f_scale: float
    n_levels: int


def quantize_tensor(x, bits: int) -> QuantizedTensor:
    """Snap ``x`` to ``n_levels`` steps per side of a grid spanning ``[-max|x|, max|x|]``."""
    x = np.asarray(x, dtype=np.float64)
    n = n_levels_for(bits)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    f = float(np.max(np.abs(x))) if x.size else 0.0
    if f == 0.0:
        return QuantizedTensor(x.copy(), 0.0, n)
    return QuantizedTensor(round_half_away(x / f * n) / n * f, f, n)


def quantize(x, bits: Optional[int]):
    """Quantized values of ``x``; ``bits=None`` passes through. Complex input is split re/im."""
    if bits is None:
        return x
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return quantize_tensor(x.real, bits).values + 1j * quantize_tensor(x.imag, bits).values
    return quantize_tensor(x, bits).values


def quantize_per_sample(x, bits: Optional[int]):
    """Quantize each leading-axis slice with its own scale (activations, inputs)."""
    if bits is None:
        return x
    x = np.asarray(x, dtype=np.float64)
    n = n_levels_for(bits)
    f = np.max(np.abs(x.reshape(x.shape[0], -1)), axis=1).reshape((-1,) + (1,) * (x.ndim - 1))
    safe = np.where(f == 0.0, 1.0, f)
    return np.where(f == 0.0, x, round_half_away(x / safe * n) / n * safe)


def quantize_last_axis(x, bits: Optional[int]):
    """Quantize every vector along the last axis with its own scale; complex split re/im."""
    if bits is None:
        return x
    if np.iscomplexobj(x):
        return quantize_last_axis(x.real, bits) + 1j * quantize_last_axis(x.imag, bits)
    n = n_levels_for(bits)
    f = np.max(np.abs(x), axis=-1, keepdims=True)
    safe = np.where(f == 0.0, 1.0, f)
    return np.where(f == 0.0, x, round_half_away(x / safe * n) / n * safe)


def _parse_bits(v) -> Optional[int]:
    if v is None:
        return None
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("off", "none", "fp", "float", ""):
            return None
        v = int(s)
    v = int(v)
    if not 1 <= v <= MAX_BITS:
        raise ValueError(f"bit width must be in [1, {MAX_BITS}], got {v}")
    return v


@dataclass(frozen=True)
class QuantSpec:
    """Bit width per parameter group; ``None`` means the group stays in float.

    ``kernel_domain="discrete"`` moves the A/B/C quantizers onto the discretized
    kernel (the values a crossbar stores). With ``common_kernel_scale`` those
    three groups share one grid per kernel at ``A`` bits.
    """

    A: Optional[int] = None
    B: Optional[int] = None
    C: Optional[int] = None
    dt: Optional[int] = None
    state: Optional[int] = None
    act: Optional[int] = None
    linear: Optional[int] = None
    coder: Optional[int] = None
    state_mode: str = "indirect-conv"
    kernel_domain: str = "continuous"
    common_kernel_scale: bool = False

    def __post_init__(self):
        for g in GROUPS:
            object.__setattr__(self, g, _parse_bits(getattr(self, g)))
        if self.state_mode not in STATE_MODES:
            raise ValueError(f"state_mode must be one of {STATE_MODES}")
        if self.kernel_domain not in KERNEL_DOMAINS:
            raise ValueError(f"kernel_domain must be one of {KERNEL_DOMAINS}")
        if self.common_kernel_scale:
            if self.kernel_domain != "discrete":
                raise ValueError("common_kernel_scale requires kernel_domain='discrete'")
            if self.A is None or any(v not in (None, self.A) for v in (self.B, self.C)):
                raise ValueError("common_kernel_scale needs A bits set and B/C equal to A or off")
        if self.state is not None and self.state_mode == "indirect-conv" and self.state % 2:
            raise ValueError(f"indirect state quantization needs an even bit width, got {self.state}")

    @classmethod
    def homogeneous(cls, bits, **kw) -> "QuantSpec":
        """Every group at ``bits``; an odd state width is rounded up to even for the
        indirect path (kernel and input each get ``ceil(bits/2)``)."""
        values = {g: bits for g in GROUPS}
        bits = _parse_bits(bits)
        if bits is not None and bits % 2 and kw.get("state_mode", "indirect-conv") == "indirect-conv":
            values["state"] = bits + 1
        return cls(**values, **kw)

    @classmethod
    def parse(cls, text: str, **kw) -> "QuantSpec":
        """Parse ``"A=4,state=8"``; ``all=6`` sets every group."""
        values = {}
        for item in filter(None, (s.strip() for s in text.replace(";", ",").split(","))):
            key, _, val = item.partition("=")
            key = key.strip()
            if key.lower() == "all":
                h = QuantSpec.homogeneous(val)
                values.update({g: getattr(h, g) for g in GROUPS})
                continue
            if key in ("state_mode", "kernel_domain"):
                kw[key] = val.strip()
                continue
            if key == "common_kernel_scale":
                kw[key] = val.strip().lower() in ("1", "true", "yes", "on")
                continue
            group = GROUP_ALIASES.get(key.lower(), key if key in GROUPS else None)
            if group is None:
                raise ValueError(f"unknown quantization group {key!r}")
            values[group] = val
        return cls(**values, **kw)

    @property
    def is_off(self) -> bool:
        return all(getattr(self, g) is None for g in GROUPS)

    def bits(self, group: str, off: Optional[int] = None) -> Optional[int]:
        v = getattr(self, group)
        return off if v is None else v

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantSpec":
        return cls(**d)

    def describe(self) -> str:
        parts = [f"{g}={getattr(self, g)}" for g in GROUPS if getattr(self, g) is not None]
        return ",".join(parts) if parts else "float"

    def with_bits(self, **kw) -> "QuantSpec":
        return replace(self, **kw)


def state_quantization_bits(r_state: Optional[int], mode: str = "indirect-conv"):
    """Bit widths used to emulate a state quantized to ``r_state`` bits.

    ``indirect-conv`` returns ``(input_bits, kernel_bits)`` for the convolutional path,
    each half of ``r_state``. ``direct-recurrent`` returns ``r_state`` itself, applied
    to the state after every step.
    """
    if mode not in STATE_MODES:
        raise ValueError(f"state mode must be one of {STATE_MODES}")
    if mode == "direct-recurrent":
        return r_state
    if r_state is None:
        return None, None
    if r_state % 2:
        raise ValueError(f"indirect state quantization needs an even bit width, got {r_state}")
    return r_state // 2, r_state // 2


def quantize_state_step(x, bits: Optional[int]):
    """Per-step state quantization for the recurrent path: own scale per state vector."""
    return quantize_last_axis(x, bits)


def _quantize_layer(layer, spec: QuantSpec):
    from .model import discretize_layer

    updates = {}
    if spec.kernel_domain == "continuous":
        if spec.A is not None:
            re = quantize(-np.exp(layer.log_neg_real), spec.A)
            with np.errstate(divide="ignore"):
                updates["log_neg_real"] = np.log(-re)
            updates["imag"] = quantize(layer.imag, spec.A)
        if spec.B is not None:
            updates["b"] = quantize(layer.b, spec.B)
        if spec.C is not None:
            updates["c"] = quantize(layer.c, spec.C)
        if spec.dt is not None:
            with np.errstate(divide="ignore"):
                updates["log_dt"] = np.log(quantize(np.exp(layer.log_dt), spec.dt))
    else:
        if spec.dt is not None:
            with np.errstate(divide="ignore"):
                layer = replace(layer, log_dt=np.log(quantize(np.exp(layer.log_dt), spec.dt)))
            updates["log_dt"] = layer.log_dt
        a_bar, b_bar, c_bar = discretize_layer(layer)
        if spec.common_kernel_scale:
            a_bar, b_bar, c_bar = quantize_kernel_common(a_bar, b_bar, c_bar, spec)
        else:
            a_bar = quantize_transition(a_bar, spec.A)
            b_bar = quantize(b_bar, spec.B)
            c_bar = quantize(c_bar, spec.C)
        updates["deployed"] = (a_bar, b_bar, c_bar)
    if spec.linear is not None:
        updates["mix_w"] = quantize(layer.mix_w, spec.linear)
    return replace(layer, **updates) if updates else layer


def _stable_snap(a_bar, f_re, f_im, n):
    """Snap a complex transition; stable entries that rounding pushes to ``|a| >= 1``
    are truncated toward zero instead (same grid, modulus can only shrink)."""
    def grid(v, f, op):
        safe = np.where(f == 0.0, 1.0, f)
        return np.where(f == 0.0, v, op(v / safe * n) / n * safe)

    rounded = grid(a_bar.real, f_re, round_half_away) + 1j * grid(a_bar.imag, f_im, round_half_away)
    cut = grid(a_bar.real, f_re, np.trunc) + 1j * grid(a_bar.imag, f_im, np.trunc)
    return np.where((np.abs(rounded) >= 1.0) & (np.abs(a_bar) < 1.0), cut, rounded)


def quantize_transition(a_bar, bits: Optional[int]):
    """``quantize`` for discrete a_bar, keeping every snapped value inside the unit circle."""
    if bits is None:
        return a_bar
    a_bar = np.asarray(a_bar, dtype=np.complex128)
    return _stable_snap(a_bar, np.max(np.abs(a_bar.real)), np.max(np.abs(a_bar.imag)), n_levels_for(bits))


def quantize_kernel_common(a_bar, b_bar, c_bar, spec: QuantSpec):
    """One grid per kernel (row) shared by every re/im part of a, b, c."""
    n = n_levels_for(spec.A)
    parts = [a_bar, b_bar, c_bar]
    on = [True, spec.B is not None, spec.C is not None]
    stacked = np.concatenate([np.abs(p.real) for p, o in zip(parts, on) if o]
                             + [np.abs(p.imag) for p, o in zip(parts, on) if o], axis=-1)
    f = np.max(stacked, axis=-1, keepdims=True)
    safe = np.where(f == 0.0, 1.0, f)

    def q(v):
        return np.where(f == 0.0, v, round_half_away(v / safe * n) / n * safe)

    out = [(q(p.real) + 1j * q(p.imag)) if o else p for p, o in zip(parts, on)]
    out[0] = _stable_snap(a_bar, f, f, n)
    return tuple(out)


def apply_ptq(model, spec: QuantSpec):
    """Return a copy of ``model`` with every enabled parameter group snapped to its grid.

    Scales are per group per layer. Activation and state groups are runtime
    quantizers and are applied by the forward pass, not here.
    """
    if spec is None or spec.is_off:
        return model
    layers = [_quantize_layer(layer, spec) for layer in model.layers]
    updates = {"layers": layers}
    if spec.coder is not None:
        updates["enc_w"] = quantize(model.enc_w, spec.coder)
        updates["dec_w"] = quantize(model.dec_w, spec.coder)
    return replace(model, **updates)
