"""The S4D classifier: encoder, stacked kernel layers, mean-pool, decoder.

Inference lives here in numpy. The differentiable training graph in
:mod:`qs4d.train` mirrors the convolutional path of :func:`forward`.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import erf

from .kernel import KernelParams, conv_apply, conv_kernel, zoh
from .noise import NoiseSpec, inject_weight_noise
from .quant import (QuantSpec, apply_ptq, quantize_last_axis,
                    quantize_per_sample, state_quantization_bits)

MODES = ("recurrent", "convolutional", "imssa")
NORM_EPS = 1e-5


@dataclass(frozen=True)
class Hyper:
    N: int
    H: int
    n_layer: int
    n_in: int = 1
    n_out: int = 2
    fixed_b: bool = True
    dt_min: float = 1e-3
    dt_max: float = 1e-1

    def __post_init__(self):
        for name in ("N", "H", "n_layer", "n_in", "n_out"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.dt_min <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_max")


@dataclass(frozen=True)
class LayerParams:
    """One layer: ``Hk`` kernels of state size N plus the H x Hk mixing layer.

    ``channels[j]`` is the residual channel kernel ``j`` reads; it is
    ``arange(H)`` until structural pruning removes kernels. ``deployed``
    optionally pins the discrete ``(a_bar, b_bar, c_bar)`` (set by discrete-domain
    quantization) and overrides discretization.
    """

    log_neg_real: np.ndarray
    imag: np.ndarray
    b: np.ndarray
    c: np.ndarray
    log_dt: np.ndarray
    d: np.ndarray
    mix_w: np.ndarray
    mix_b: np.ndarray
    norm_scale: np.ndarray
    norm_shift: np.ndarray
    channels: np.ndarray
    deployed: Optional[tuple] = None

    @property
    def n_kernels(self) -> int:
        return len(self.channels)

    def kernel(self, j: int) -> KernelParams:
        return KernelParams(self.log_neg_real[j], self.imag[j], self.b[j], self.c[j],
                            float(self.log_dt[j]), float(self.d[j]))


@dataclass(frozen=True)
class ModelParams:
    hyper: Hyper
    enc_w: np.ndarray
    enc_b: np.ndarray
    layers: tuple
    dec_w: np.ndarray
    dec_b: np.ndarray

    def __post_init__(self):
        h = self.hyper
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.enc_w.shape != (h.H, h.n_in) or self.dec_w.shape != (h.n_out, h.H):
            raise ValueError("encoder/decoder shapes do not match hyperparameters")
        if len(self.layers) != h.n_layer:
            raise ValueError(f"expected {h.n_layer} layers, got {len(self.layers)}")
        for i, layer in enumerate(self.layers):
            k = layer.n_kernels
            if layer.log_neg_real.shape != (k, h.N) or layer.mix_w.shape != (h.H, k):
                raise ValueError(f"layer {i}: inconsistent kernel/mixing shapes")

    @property
    def kernels_per_layer(self) -> tuple:
        return tuple(layer.n_kernels for layer in self.layers)


# ----------------------------------------------------------------------------
# initialization


def init_model(hyper: Hyper, rng) -> ModelParams:
    """S4D-Lin initialization: ``a_n = -1/2 + i pi n``, log-uniform dt in ``[dt_min, dt_max]``."""
    rng = np.random.default_rng(rng)
    N, H = hyper.N, hyper.H

    def linear(fan_out, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, (fan_out, fan_in)), rng.uniform(-bound, bound, fan_out)

    def cgauss(shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)

    enc_w, enc_b = linear(H, hyper.n_in)
    layers = []
    for _ in range(hyper.n_layer):
        log_dt = rng.uniform(np.log(hyper.dt_min), np.log(hyper.dt_max), H)
        c = cgauss((H, N)) / np.sqrt(N)
        b = np.ones((H, N), dtype=np.complex128) if hyper.fixed_b else cgauss((H, N))
        mix_w, mix_b = linear(H, H)
        layers.append(LayerParams(
            log_neg_real=np.full((H, N), np.log(0.5)),
            imag=np.tile(np.pi * np.arange(N, dtype=np.float64), (H, 1)),
            b=b, c=c, log_dt=log_dt, d=np.zeros(H),
            mix_w=mix_w, mix_b=mix_b,
            norm_scale=np.ones(H), norm_shift=np.zeros(H),
            channels=np.arange(H),
        ))
    dec_w, dec_b = linear(hyper.n_out, H)
    return ModelParams(hyper, enc_w, enc_b, tuple(layers), dec_w, dec_b)


# ----------------------------------------------------------------------------
# forward


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def layer_norm(x, scale, shift, eps=NORM_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * scale + shift


def discretize_layer(layer: LayerParams):
    """Discrete ``(a_bar, b_bar, c_bar)`` of every kernel in the layer, shape ``(Hk, N)``."""
    if layer.deployed is not None:
        return layer.deployed
    a = -np.exp(layer.log_neg_real) + 1j * layer.imag
    a_bar, b_bar = zoh(a, np.exp(layer.log_dt)[:, None], layer.b)
    return a_bar, b_bar, np.asarray(layer.c, dtype=np.complex128)


def apply_kernels(a_bar, b_bar, c_bar, d, u, mode: str = "convolutional",
                  state_bits: Optional[int] = None):
    """Run a bank of kernels on ``u`` of shape ``(B, Hk, L)``; returns ``(B, Hk, L)``.

    ``state_bits`` quantizes the state: through the kernel/input halves in
    convolutional mode (own scale per kernel and per sample-kernel input), per
    step in the recurrent modes.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    B, Hk, L = u.shape
    if mode == "convolutional":
        K = conv_kernel(a_bar, b_bar, c_bar, L)
        in_bits, k_bits = state_quantization_bits(state_bits, "indirect-conv")
        K = quantize_last_axis(K, k_bits)
        u = quantize_last_axis(u, in_bits)
        return conv_apply(K[None], u) + d[None, :, None] * u
    x = np.zeros((B, Hk, a_bar.shape[-1]), dtype=np.complex128)
    y = np.empty((B, Hk, L))
    for t in range(L):
        u_t = u[:, :, t]
        x_new = a_bar * x + b_bar * u_t[..., None]
        x_new = quantize_last_axis(x_new, state_bits)
        read = x if mode == "imssa" else x_new
        y[:, :, t] = 2.0 * np.real(np.sum(c_bar * read, axis=-1)) + d * u_t
        x = x_new
    return y


KernelRunner = Callable[[int, np.ndarray], np.ndarray]


def forward(model: ModelParams, u, mode: str = "convolutional", quant: Optional[QuantSpec] = None,
            noise: Optional[NoiseSpec] = None, rng=None, kernel_runner: Optional[KernelRunner] = None,
            return_trace: bool = False):
    """Logits for one sequence ``(L, n_in)`` or a batch ``(B, L, n_in)``.

    ``kernel_runner(layer_index, u)`` replaces the software kernel bank when
    given (``u`` is ``(B, Hk, L)``); the crossbar simulator plugs in here.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    u = np.asarray(u, dtype=np.float64)
    single = u.ndim == 2
    if single:
        u = u[None]
    hyper = model.hyper
    if u.ndim != 3 or u.shape[-1] != hyper.n_in or u.shape[1] < 1:
        raise ValueError(f"input must be (B, L, {hyper.n_in}) with L >= 1, got {u.shape}")
    quant = quant or QuantSpec()
    model = apply_ptq(model, quant)
    if noise is not None and noise.sigma > 0:
        rng = np.random.default_rng(rng)

    h = u @ model.enc_w.T + model.enc_b
    trace = []
    for i, layer in enumerate(model.layers):
        z = layer_norm(h, layer.norm_scale, layer.norm_shift)
        zc = np.transpose(z[:, :, layer.channels], (0, 2, 1))
        if kernel_runner is not None:
            y = kernel_runner(i, zc)
        else:
            a_bar, b_bar, c_bar = discretize_layer(layer)
            if noise is not None and noise.sigma > 0:
                p = inject_weight_noise({"A": a_bar, "B": b_bar, "C": c_bar}, noise, rng)
                a_bar, b_bar, c_bar = p["A"], p["B"], p["C"]
            y = apply_kernels(a_bar, b_bar, c_bar, layer.d, zc, mode, quant.state)
        g = gelu(np.transpose(y, (0, 2, 1)))
        h = h + g @ layer.mix_w.T + layer.mix_b
        h = quantize_per_sample(h, quant.act)
        if not np.all(np.isfinite(h)):
            raise FloatingPointError(f"non-finite activations in layer {i}")
        if return_trace:
            trace.append(h[0] if single else h)
    logits = h.mean(axis=1) @ model.dec_w.T + model.dec_b
    if single:
        logits = logits[0]
    return (logits, trace) if return_trace else logits


def predict(model, u, batch_size: int = 256, **kw) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    out = [forward(model, u[i:i + batch_size], **kw) for i in range(0, len(u), batch_size)]
    return np.concatenate(out, axis=0)


def accuracy(model, u, labels, **kw) -> float:
    """Percentage of correctly classified samples."""
    pred = np.argmax(predict(model, u, **kw), axis=-1)
    return 100.0 * float(np.mean(pred == np.asarray(labels)))


# ----------------------------------------------------------------------------
# flat tensor view and checkpoints

_LAYER_REAL = ("log_neg_real", "imag", "log_dt", "d", "mix_w", "mix_b", "norm_scale", "norm_shift")
_LAYER_COMPLEX = ("b", "c")


def to_arrays(model: ModelParams) -> dict:
    """Flat ``name -> float64 array`` view; complex tensors split into ``_re``/``_im``."""
    out = {"enc_w": model.enc_w, "enc_b": model.enc_b}
    for i, layer in enumerate(model.layers):
        p = f"layers.{i}."
        for name in _LAYER_REAL:
            out[p + name] = getattr(layer, name)
        for name in _LAYER_COMPLEX:
            v = getattr(layer, name)
            out[p + name + "_re"], out[p + name + "_im"] = v.real, v.imag
        if layer.deployed is not None:
            for key, v in zip(("a_bar", "b_bar", "c_bar"), layer.deployed):
                out[p + key + "_re"], out[p + key + "_im"] = v.real, v.imag
    out["dec_w"], out["dec_b"] = model.dec_w, model.dec_b
    return {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in out.items()}


def from_arrays(hyper: Hyper, arrays: dict, channels=None) -> ModelParams:
    layers = []
    for i in range(hyper.n_layer):
        p = f"layers.{i}."
        kw = {name: np.asarray(arrays[p + name]) for name in _LAYER_REAL}
        for name in _LAYER_COMPLEX:
            kw[name] = arrays[p + name + "_re"] + 1j * arrays[p + name + "_im"]
        if p + "a_bar_re" in arrays:
            kw["deployed"] = tuple(arrays[p + k + "_re"] + 1j * arrays[p + k + "_im"]
                                   for k in ("a_bar", "b_bar", "c_bar"))
        ch = channels[i] if channels is not None else np.arange(kw["log_dt"].shape[0])
        layers.append(LayerParams(channels=np.asarray(ch, dtype=np.int64), **kw))
    return ModelParams(hyper, np.asarray(arrays["enc_w"]), np.asarray(arrays["enc_b"]), tuple(layers),
                       np.asarray(arrays["dec_w"]), np.asarray(arrays["dec_b"]))


CHECKPOINT_FORMAT = "qs4d-checkpoint"


def save_checkpoint(path, model: ModelParams, quant: Optional[QuantSpec] = None,
                    seed: Optional[int] = None, extra: Optional[dict] = None) -> Path:
    """Write ``manifest.json`` plus one little-endian float64 ``.bin`` per tensor."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for name, arr in to_arrays(model).items():
        fname = name.replace(".", "_") + ".bin"
        (path / fname).write_bytes(arr.astype("<f8").tobytes(order="C"))
        tensors[name] = {"file": fname, "shape": list(arr.shape), "dtype": "float64-le"}
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "hyper": asdict(model.hyper),
        "channels": [layer.channels.tolist() for layer in model.layers],
        "quant": quant.to_dict() if quant is not None else None,
        "seed": seed,
        "tensors": tensors,
    }
    if extra:
        manifest["extra"] = extra
    tmp = path / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path / "manifest.json")
    return path


def load_checkpoint(path):
    """Return ``(model, manifest)``."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} directory")
    arrays = {}
    for name, info in manifest["tensors"].items():
        raw = (path / info["file"]).read_bytes()
        count = int(np.prod(info["shape"])) if info["shape"] else 1
        if len(raw) != 8 * count:
            raise ValueError(f"{info['file']}: expected {8 * count} bytes, found {len(raw)}")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(info["shape"]).astype(np.float64)
    model = from_arrays(Hyper(**manifest["hyper"]), arrays, manifest["channels"])
    return model, manifest


def checkpoint_quant(manifest) -> Optional[QuantSpec]:
    q = manifest.get("quant")
    return QuantSpec.from_dict(q) if q else None


def with_layer(model: ModelParams, i: int, **updates) -> ModelParams:
    layers = list(model.layers)
    layers[i] = replace(layers[i], **updates)
    return replace(model, layers=tuple(layers))
