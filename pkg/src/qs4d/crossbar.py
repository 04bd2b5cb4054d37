"""Memristive crossbar simulation of single-array (IMSSA) kernels.

A kernel's augmented matrix ``M = [[A, B], [C, D]]`` is expanded so every
complex entry becomes a 4x4 block of non-negative conductances driven by
non-negative voltages (rows/columns ordered ``r+, r-, i+, i-``). One
matrix-vector read per time step produces the next state and the output of
the previous step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .kernel import DiscreteKernel
from .quant import quantize_last_axis

DEFAULT_SIZE = 64
SCALINGS = ("common-max", "per-parameter")


class CrossbarOverflow(FloatingPointError):
    pass


@dataclass(frozen=True)
class DeviceModel:
    """Conductance range, programming resolution and noise (relative to ``g_max - g_min``).

    ``program_bits=None`` means continuous programming (debug).
    """

    g_min: float = 0.0
    g_max: float = 1.0
    program_bits: Optional[int] = 3
    sigma_write: float = 0.01
    sigma_read: float = 0.005

    def __post_init__(self):
        if not 0 <= self.g_min < self.g_max:
            raise ValueError("need 0 <= g_min < g_max")
        if self.program_bits is not None and self.program_bits < 1:
            raise ValueError("program_bits must be >= 1")
        if self.sigma_write < 0 or self.sigma_read < 0:
            raise ValueError("noise levels must be non-negative")

    @property
    def g_range(self) -> float:
        return self.g_max - self.g_min

    @property
    def levels(self) -> Optional[np.ndarray]:
        if self.program_bits is None:
            return None
        return np.linspace(self.g_min, self.g_max, 2 ** self.program_bits)

    def snap(self, g):
        """Nearest programmable level."""
        g = np.asarray(g, dtype=np.float64)
        if self.program_bits is None:
            return g.copy()
        steps = 2 ** self.program_bits - 1
        k = np.clip(np.floor((g - self.g_min) / self.g_range * steps + 0.5), 0, steps)
        return self.g_min + k * (self.g_range / steps)


def ideal_device() -> DeviceModel:
    return DeviceModel(program_bits=None, sigma_write=0.0, sigma_read=0.0)


# ----------------------------------------------------------------------------
# encodings


def encode_signed(m, s: float, device: DeviceModel = DeviceModel()):
    """One-sided differential pair ``(g+, g-)`` with ``g+ - g- = m (g_max - g_min) / s``."""
    m = np.asarray(m, dtype=np.float64)
    if not s > 0:
        raise ValueError("scale must be positive")
    if np.any(np.abs(m) > s * (1 + 1e-12)):
        raise ValueError(f"value magnitude exceeds scale {s}")
    w = np.clip(m / s, -1.0, 1.0) * device.g_range
    return device.g_min + np.maximum(w, 0.0), device.g_min + np.maximum(-w, 0.0)


def decode_signed(g_pos, g_neg, s: float, device: DeviceModel = DeviceModel()):
    return (np.asarray(g_pos) - np.asarray(g_neg)) * (s / device.g_range)


def complex_block(gr_p, gr_n, gi_p, gi_n):
    """The 4x4 conductance block for one complex entry (rows are outputs)."""
    return np.array([
        [gr_p, gr_n, gi_n, gi_p],
        [gr_n, gr_p, gi_p, gi_n],
        [gi_p, gi_n, gr_p, gr_n],
        [gi_n, gi_p, gr_n, gr_p],
    ])


def encode_complex_block(m: complex, s: float, device: DeviceModel = DeviceModel()):
    m = complex(m)
    if max(abs(m.real), abs(m.imag)) > s * (1 + 1e-12):
        raise ValueError(f"complex value {m} exceeds scale {s}")
    gr_p, gr_n = encode_signed(m.real, s, device)
    gi_p, gi_n = encode_signed(m.imag, s, device)
    return complex_block(float(gr_p), float(gr_n), float(gi_p), float(gi_n))


def expand_voltages(x):
    """Complex ``(..., n)`` -> non-negative ``(..., 4n)`` as ``(r+, r-, i+, i-)`` per entry."""
    x = np.asarray(x, dtype=np.complex128)
    v = np.stack([np.maximum(x.real, 0), np.maximum(-x.real, 0),
                  np.maximum(x.imag, 0), np.maximum(-x.imag, 0)], axis=-1)
    return v.reshape(x.shape[:-1] + (4 * x.shape[-1],))


def decode_currents(i, device: DeviceModel = DeviceModel()):
    """Non-negative ``(..., 4n)`` currents -> complex ``(..., n)`` in conductance-normalized units."""
    i = np.asarray(i, dtype=np.float64)
    q = i.reshape(i.shape[:-1] + (-1, 4))
    return ((q[..., 0] - q[..., 1]) + 1j * (q[..., 2] - q[..., 3])) / device.g_range


def block_mvm(block, v: complex, device: DeviceModel = DeviceModel(), s: float = 1.0) -> complex:
    """Decoded product of one 4x4 block with one complex input."""
    cur = block @ expand_voltages(np.array([v]))
    return complex(decode_currents(cur, device)[0] * s)


# ----------------------------------------------------------------------------
# arrays and layouts


@dataclass
class CrossbarArray:
    G: np.ndarray
    device: DeviceModel
    targets: Optional[np.ndarray] = None

    @classmethod
    def blank(cls, rows=DEFAULT_SIZE, cols=DEFAULT_SIZE, device: DeviceModel = DeviceModel()):
        return cls(np.full((rows, cols), device.g_min), device)

    @property
    def shape(self):
        return self.G.shape


@dataclass
class ImssaLayout:
    """Augmented kernel matrix and how it is placed on the array.

    ``row_scale[k]`` turns decoded output ``k`` (state rows, then the output row)
    back into kernel units; ``col_gain[k]`` multiplies input ``k``'s voltage.
    """

    M: np.ndarray
    N: int
    scaling: str
    scales: dict
    row_scale: np.ndarray
    col_gain: np.ndarray
    used: int = field(init=False)

    def __post_init__(self):
        self.used = 4 * (self.N + 1)

    def state_rows(self):
        return slice(0, 4 * self.N)

    def output_row(self):
        return slice(4 * self.N, 4 * self.N + 4)


def augmented_matrix(k: DiscreteKernel) -> np.ndarray:
    """``[[A, B], [C, D/2]]``; the corner is halved because the output row is read as ``2 Re(.)``."""
    N = k.N
    M = np.zeros((N + 1, N + 1), dtype=np.complex128)
    M[np.arange(N), np.arange(N)] = k.a_bar
    M[:N, N] = k.b_bar
    M[N, :N] = k.c_bar
    M[N, N] = 0.5 * k.d_bar
    return M


def _group_scale(*parts):
    vals = np.concatenate([np.concatenate([np.abs(np.real(p)).ravel(), np.abs(np.imag(p)).ravel()])
                           for p in parts])
    return float(np.max(vals)) if vals.size else 0.0


def map_imssa(k: DiscreteKernel, device: DeviceModel = DeviceModel(), scaling: str = "common-max",
              size: int = DEFAULT_SIZE):
    """Place one kernel on a ``size x size`` array; returns ``(array, layout)`` with snapped targets.

    ``common-max`` shares one scale across every kernel parameter. ``per-parameter``
    scales A, B and C separately; the input voltage is then pre-scaled by
    ``s_B / s_A`` so state rows still sum consistently.
    """
    if scaling not in SCALINGS:
        raise ValueError(f"scaling must be one of {SCALINGS}")
    N = k.N
    if 4 * (N + 1) > size:
        raise ValueError(f"N={N} does not fit: needs {4 * (N + 1)} of {size} lines")
    M = augmented_matrix(k)
    if scaling == "common-max":
        s = _group_scale(M)
        if s == 0:
            raise ValueError("kernel is all zero; scale would be zero")
        scales = {"A": s, "B": s, "C": s, "D": s}
        norm = M / s
        gain_u = 1.0
    else:
        s_a = _group_scale(k.a_bar)
        if s_a == 0:
            raise ValueError("A is all zero; scale would be zero")
        s_b = _group_scale(k.b_bar) or s_a
        s_c = _group_scale(k.c_bar) or s_a
        gain_u = s_b / s_a
        s_d = s_c * gain_u
        scales = {"A": s_a, "B": s_b, "C": s_c, "D": s_d}
        norm = np.zeros_like(M)
        norm[:N, :N] = M[:N, :N] / s_a
        norm[:N, N] = M[:N, N] / s_b
        norm[N, :N] = M[N, :N] / s_c
        norm[N, N] = M[N, N] / s_d
        if abs(norm[N, N]) > 1:
            raise ValueError("D does not fit the per-parameter scales of B and C")
    targets = np.full((size, size), device.g_min)
    for r in range(N + 1):
        for c in range(N + 1):
            targets[4 * r:4 * r + 4, 4 * c:4 * c + 4] = encode_complex_block(norm[r, c], 1.0, device)
    targets = device.snap(targets)
    row_scale = np.array([scales["A"]] * N + [scales["C"]])
    col_gain = np.array([1.0] * N + [gain_u])
    layout = ImssaLayout(M, N, scaling, scales, row_scale, col_gain)
    return CrossbarArray(targets.copy(), device, targets), layout


def program(array: CrossbarArray, targets=None, rng=None) -> CrossbarArray:
    """Snap to programmable levels, add static write noise, clamp to the device range."""
    rng = np.random.default_rng(rng)
    dev = array.device
    targets = array.targets if targets is None else np.asarray(targets, dtype=np.float64)
    if np.any(targets < dev.g_min - 1e-12) or np.any(targets > dev.g_max + 1e-12):
        raise ValueError("targets outside the device conductance range")
    G = dev.snap(targets)
    if dev.sigma_write > 0:
        G = G + rng.normal(0.0, dev.sigma_write * dev.g_range, G.shape)
    return CrossbarArray(np.clip(G, dev.g_min, dev.g_max), dev, targets)


def mvm_read(array: CrossbarArray, v, rng=None):
    """Currents ``(G + E) v`` with fresh transient read noise ``E``.

    ``v`` is ``(cols,)`` or ``(cols, B)``; a batched call shares one noise draw.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != array.G.shape[1]:
        raise ValueError(f"voltage vector length {v.shape[0]} != array width {array.G.shape[1]}")
    if np.any(v < 0):
        raise ValueError("crossbar inputs must be non-negative voltages")
    G = array.G
    if array.device.sigma_read > 0:
        rng = np.random.default_rng(rng)
        G = G + rng.normal(0.0, array.device.sigma_read * array.device.g_range, G.shape)
    return G @ v


def run_kernel_on_crossbar(array: CrossbarArray, layout: ImssaLayout, u, rng=None,
                           state_bits: Optional[int] = None, v_full_scale: Optional[float] = None):
    """Stream ``u`` (``(L,)`` or ``(B, L)``) through the array; returns outputs of the same shape.

    Output ``t`` is ``2 Re(C x_{t-1}) + D u_t`` (one-step delay). The state is
    digitized to ``state_bits`` (own scale per step and sample, re/im apart)
    before being re-applied as voltages.
    """
    u = np.asarray(u, dtype=np.float64)
    single = u.ndim == 1
    if single:
        u = u[None]
    rng = np.random.default_rng(rng)
    B, L = u.shape
    N = layout.N
    cols = array.G.shape[1]
    x = np.zeros((B, N), dtype=np.complex128)
    y = np.empty((B, L))
    v = np.zeros((cols, B))
    for t in range(L):
        inp = np.concatenate([x, u[:, t:t + 1].astype(np.complex128)], axis=1) * layout.col_gain
        if v_full_scale is not None:
            peak = np.max(np.maximum(np.abs(inp.real), np.abs(inp.imag)))
            if peak > v_full_scale:
                raise CrossbarOverflow(f"input voltage {peak:.4g} exceeds full scale at step {t}")
        v[:layout.used] = expand_voltages(inp).T
        cur = mvm_read(array, v, rng)
        out = decode_currents(cur[:layout.used].T, array.device) * layout.row_scale
        y[:, t] = 2.0 * out[:, N].real
        x = quantize_last_axis(out[:, :N], state_bits)
    return y[0] if single else y


# ----------------------------------------------------------------------------
# model-level deployment


class CrossbarKernelBank:
    """Kernel runner for :func:`qs4d.model.forward`: one programmed array per kernel."""

    def __init__(self, model, device: DeviceModel = DeviceModel(), scaling: str = "common-max",
                 quant=None, seed: int = 0, size: int = DEFAULT_SIZE,
                 v_full_scale: Optional[float] = None):
        """``quant`` is applied to the weights first; its state width drives the per-step ADC."""
        from .model import discretize_layer
        from .quant import apply_ptq

        if quant is not None:
            model = apply_ptq(model, quant)
        self.rng = np.random.default_rng(seed)
        self.state_bits = None if quant is None else quant.state
        self.v_full_scale = v_full_scale
        self.arrays = []
        for layer in model.layers:
            a_bar, b_bar, c_bar = discretize_layer(layer)
            per_layer = []
            for j in range(layer.n_kernels):
                k = DiscreteKernel(a_bar[j], b_bar[j], c_bar[j], float(layer.d[j]))
                arr, lay = map_imssa(k, device, scaling, size)
                per_layer.append((program(arr, rng=self.rng), lay))
            self.arrays.append(per_layer)

    def __call__(self, layer_index: int, u):
        out = np.empty_like(u)
        for j, (arr, lay) in enumerate(self.arrays[layer_index]):
            out[:, j, :] = run_kernel_on_crossbar(arr, lay, u[:, j, :], self.rng,
                                                  self.state_bits, self.v_full_scale)
        return out


# ----------------------------------------------------------------------------
# dump / restore


def dump_array(array: CrossbarArray, path) -> Path:
    """Text header (dims and device fields) then ``G`` as little-endian float64, row-major."""
    path = Path(path)
    d = array.device
    header = (f"qs4d-crossbar 1\nrows {array.G.shape[0]}\ncols {array.G.shape[1]}\n"
              f"g_min {d.g_min!r}\ng_max {d.g_max!r}\nprogram_bits {d.program_bits}\n"
              f"sigma_write {d.sigma_write!r}\nsigma_read {d.sigma_read!r}\nend\n")
    path.write_bytes(header.encode("ascii") + np.ascontiguousarray(array.G, dtype="<f8").tobytes())
    return path


def load_array(path) -> CrossbarArray:
    raw = Path(path).read_bytes()
    marker = b"\nend\n"
    cut = raw.index(marker) + len(marker)
    lines = raw[:cut].decode("ascii").split("\n")
    if not lines[0].startswith("qs4d-crossbar"):
        raise ValueError(f"{path}: not a crossbar dump")
    fields_ = dict(line.split(" ", 1) for line in lines[1:] if " " in line)
    rows, cols = int(fields_["rows"]), int(fields_["cols"])
    pb = None if fields_["program_bits"] == "None" else int(fields_["program_bits"])
    device = DeviceModel(float(fields_["g_min"]), float(fields_["g_max"]), pb,
                         float(fields_["sigma_write"]), float(fields_["sigma_read"]))
    body = raw[cut:]
    if len(body) != 8 * rows * cols:
        raise ValueError(f"{path}: expected {8 * rows * cols} conductance bytes, found {len(body)}")
    G = np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)
    return CrossbarArray(G, device)


def with_device(array: CrossbarArray, **kw) -> CrossbarArray:
    return replace(array, device=replace(array.device, **kw))
