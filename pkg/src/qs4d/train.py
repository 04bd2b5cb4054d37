"""Training: a torch mirror of the convolutional forward with straight-through quantizers.

Parameters travel as the flat dict produced by :func:`qs4d.model.to_arrays`;
torch is only used for reverse-mode gradients and the Adam update.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .kernel import ZERO_A_EPS
from .model import NORM_EPS, Hyper, ModelParams, from_arrays, to_arrays
from .noise import NoiseSpec, inject_weight_noise
from .quant import QuantSpec, n_levels_for, state_quantization_bits

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "wall_seconds")


class TrainingDiverged(FloatingPointError):
    pass


def trainable_names(hyper: Hyper) -> list:
    names = ["enc_w", "enc_b"]
    for i in range(hyper.n_layer):
        p = f"layers.{i}."
        names += [p + n for n in ("log_neg_real", "imag", "c_re", "c_im", "log_dt",
                                  "mix_w", "mix_b", "norm_scale", "norm_shift")]
        if not hyper.fixed_b:
            names += [p + "b_re", p + "b_im"]
    return names + ["dec_w", "dec_b"]


# ----------------------------------------------------------------------------
# straight-through quantizers


def _round_half_away(x):
    return torch.sign(x) * torch.floor(torch.abs(x) + 0.5)


def _snap(x, f, n):
    safe = torch.where(f == 0, torch.ones_like(f), f)
    return torch.where(f == 0, x, _round_half_away(x / safe * n) / n * safe)


def q_tensor(x, bits):
    """Whole-tensor scale; complex split re/im."""
    if x.is_complex():
        return torch.complex(q_tensor(x.real, bits), q_tensor(x.imag, bits))
    return _snap(x, x.abs().max(), n_levels_for(bits))


def q_per_sample(x, bits):
    f = x.abs().reshape(x.shape[0], -1).max(dim=1).values.reshape((-1,) + (1,) * (x.dim() - 1))
    return _snap(x, f, n_levels_for(bits))


def q_last_axis(x, bits):
    """Own scale for every vector along the last axis (real input)."""
    return _snap(x, x.abs().max(dim=-1, keepdim=True).values, n_levels_for(bits))


def _stable_snap(a, f_re, f_im, n):
    """Mirror of the numpy rule: truncate toward zero where rounding gives ``|a| >= 1``."""
    def grid(v, f, op):
        safe = torch.where(f == 0, torch.ones_like(f), f)
        return torch.where(f == 0, v, op(v / safe * n) / n * safe)

    rounded = torch.complex(grid(a.real, f_re, _round_half_away), grid(a.imag, f_im, _round_half_away))
    cut = torch.complex(grid(a.real, f_re, torch.trunc), grid(a.imag, f_im, torch.trunc))
    return torch.where((rounded.abs() >= 1.0) & (a.abs() < 1.0), cut, rounded)


def q_transition(a, bits):
    return _stable_snap(a, a.real.abs().max(), a.imag.abs().max(), n_levels_for(bits))


def q_common_kernel(parts, bits):
    """One scale per kernel (row) across re/im of every tensor in ``parts``; ``parts[0]`` is a_bar."""
    stacked = torch.cat([p.real.abs() for p in parts] + [p.imag.abs() for p in parts], dim=-1)
    f = stacked.max(dim=-1, keepdim=True).values
    n = n_levels_for(bits)
    out = [torch.complex(_snap(p.real, f, n), _snap(p.imag, f, n)) for p in parts]
    out[0] = _stable_snap(parts[0], f, f, n)
    return out


class STE:
    """Adds the (detached) quantization offset, so the backward pass sees an identity.

    ``record=True`` keeps every offset in call order; passing ``replay`` reuses
    recorded offsets instead of recomputing them, which freezes the quantizers
    for finite-difference checks of the straight-through gradient.
    """

    def __init__(self, record: bool = False, replay: Optional[list] = None):
        self.record = record
        self.replay = replay
        self.offsets = []
        self._i = 0

    def __call__(self, x, fn, *args):
        if self.replay is not None:
            off = self.replay[self._i]
            self._i += 1
        else:
            with torch.no_grad():
                off = fn(x.detach(), *args) - x.detach()
            if self.record:
                self.offsets.append(off)
        return x + off

    def many(self, xs, fn, *args):
        if self.replay is not None:
            offs = self.replay[self._i]
            self._i += 1
        else:
            with torch.no_grad():
                det = [x.detach() for x in xs]
                offs = [q - x for q, x in zip(fn(det, *args), det)]
            if self.record:
                self.offsets.append(offs)
        return [x + o for x, o in zip(xs, offs)]


def ste_quantize(x, bits: int):
    """Forward value of ``quantize_tensor(x, bits)``, gradient of the identity."""
    return STE()(x, q_tensor, bits)


# ----------------------------------------------------------------------------
# torch forward (convolutional mode)


def to_torch(arrays: dict, names=None, requires_grad: bool = False) -> dict:
    names = set(names or ())
    return {k: torch.tensor(v, dtype=torch.float64, requires_grad=requires_grad and k in names)
            for k, v in arrays.items()}


def _discretize(a, dt, b):
    a_bar = torch.exp(dt[:, None] * a)
    small = a.abs() < ZERO_A_EPS
    safe = torch.where(small, torch.ones_like(a), a)
    b_bar = torch.where(small, dt[:, None] * b, (a_bar - 1.0) / safe * b)
    return a_bar, b_bar


def _conv_kernel(a_bar, b_bar, c_bar, L):
    factors = torch.cat([b_bar[:, None, :], a_bar[:, None, :].expand(-1, L - 1, -1)], dim=1)
    powers = torch.cumprod(factors, dim=1)
    return 2.0 * torch.einsum("hln,hn->hl", powers, c_bar).real


def _gelu(x):
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


def torch_forward(p: dict, hyper: Hyper, channels, u, quant: Optional[QuantSpec] = None,
                  noise: Optional[NoiseSpec] = None, rng=None, ste: Optional[STE] = None):
    """Logits ``(B, n_out)`` for ``u`` of shape ``(B, L, n_in)``; mirrors ``forward(mode='convolutional')``.

    Noise draws consume ``rng`` in the same order as the numpy forward.
    """
    quant = quant or QuantSpec()
    ste = ste or STE()
    u = torch.as_tensor(u, dtype=torch.float64)
    L = u.shape[1]
    in_bits, k_bits = state_quantization_bits(quant.state, "indirect-conv")

    enc_w = p["enc_w"] if quant.coder is None else ste(p["enc_w"], q_tensor, quant.coder)
    h = u @ enc_w.T + p["enc_b"]
    for i in range(hyper.n_layer):
        pre = f"layers.{i}."
        mu = h.mean(dim=-1, keepdim=True)
        var = ((h - mu) ** 2).mean(dim=-1, keepdim=True)
        z = (h - mu) / torch.sqrt(var + NORM_EPS) * p[pre + "norm_scale"] + p[pre + "norm_shift"]
        zc = z[:, :, list(channels[i])].permute(0, 2, 1)

        if pre + "a_bar_re" in p:
            a_bar, b_bar, c_bar = (torch.complex(p[pre + k + "_re"], p[pre + k + "_im"])
                                   for k in ("a_bar", "b_bar", "c_bar"))
        else:
            a_re = -torch.exp(p[pre + "log_neg_real"])
            a_im = p[pre + "imag"]
            b = torch.complex(p[pre + "b_re"], p[pre + "b_im"])
            c_bar = torch.complex(p[pre + "c_re"], p[pre + "c_im"])
            dt = torch.exp(p[pre + "log_dt"])
            if quant.kernel_domain == "continuous":
                if quant.A is not None:
                    a_re = ste(a_re, q_tensor, quant.A)
                    a_im = ste(a_im, q_tensor, quant.A)
                if quant.B is not None:
                    b = ste(b, q_tensor, quant.B)
                if quant.C is not None:
                    c_bar = ste(c_bar, q_tensor, quant.C)
            if quant.dt is not None:
                dt = ste(dt, q_tensor, quant.dt)
            a_bar, b_bar = _discretize(torch.complex(a_re, a_im), dt, b)
            if quant.kernel_domain == "discrete":
                if quant.common_kernel_scale:
                    on = [(0, a_bar)] + [(j, t) for j, (t, bits) in
                                         enumerate(((b_bar, quant.B), (c_bar, quant.C)), 1) if bits is not None]
                    snapped = ste.many([t for _, t in on], q_common_kernel, quant.A)
                    out = [a_bar, b_bar, c_bar]
                    for (j, _), t in zip(on, snapped):
                        out[j] = t
                    a_bar, b_bar, c_bar = out
                else:
                    if quant.A is not None:
                        a_bar = ste(a_bar, q_transition, quant.A)
                    if quant.B is not None:
                        b_bar = ste(b_bar, q_tensor, quant.B)
                    if quant.C is not None:
                        c_bar = ste(c_bar, q_tensor, quant.C)

        if noise is not None and noise.sigma > 0:
            base = {"A": a_bar.detach().numpy(), "B": b_bar.detach().numpy(), "C": c_bar.detach().numpy()}
            noisy = inject_weight_noise(base, noise, rng)
            a_bar = a_bar + torch.from_numpy(noisy["A"] - base["A"])
            b_bar = b_bar + torch.from_numpy(noisy["B"] - base["B"])
            c_bar = c_bar + torch.from_numpy(noisy["C"] - base["C"])

        K = _conv_kernel(a_bar, b_bar, c_bar, L)
        if k_bits is not None:
            K = ste(K, q_last_axis, k_bits)
            zc = ste(zc, q_last_axis, in_bits)
        n = 2 * L
        y = torch.fft.irfft(torch.fft.rfft(K, n=n) * torch.fft.rfft(zc, n=n), n=n)[..., :L]
        y = y + p[pre + "d"][None, :, None] * zc
        g = _gelu(y.permute(0, 2, 1))
        mix_w = p[pre + "mix_w"] if quant.linear is None else ste(p[pre + "mix_w"], q_tensor, quant.linear)
        h = h + g @ mix_w.T + p[pre + "mix_b"]
        if quant.act is not None:
            h = ste(h, q_per_sample, quant.act)
    dec_w = p["dec_w"] if quant.coder is None else ste(p["dec_w"], q_tensor, quant.coder)
    return h.mean(dim=1) @ dec_w.T + p["dec_b"]


# ----------------------------------------------------------------------------
# loss and gradients


def loss(logits, label) -> float:
    """Softmax cross-entropy of a single logit vector."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= int(label) < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    m = np.max(logits)
    return float(m + np.log(np.sum(np.exp(logits - m))) - logits[int(label)])


def _ce(logits, labels):
    return torch.nn.functional.cross_entropy(logits, torch.as_tensor(labels, dtype=torch.long))


def _training_noise(noise):
    return noise if noise is not None and noise.in_training and noise.sigma > 0 else None


def grad(model: ModelParams, u, labels, quant: Optional[QuantSpec] = None,
         noise: Optional[NoiseSpec] = None, rng=None) -> dict:
    """Gradients of the mean batch cross-entropy w.r.t. every trainable tensor."""
    names = trainable_names(model.hyper)
    arrays = to_arrays(_strip_deployed(model))
    p = to_torch(arrays, names, requires_grad=True)
    channels = [layer.channels for layer in model.layers]
    rng = np.random.default_rng(rng)
    logits = torch_forward(p, model.hyper, channels, u, quant, _training_noise(noise), rng)
    _ce(logits, labels).backward()
    out = {}
    for n in names:
        g = p[n].grad
        g = np.zeros_like(arrays[n]) if g is None else g.numpy().copy()
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {n}")
        out[n] = g
    return out


def _strip_deployed(model: ModelParams) -> ModelParams:
    from dataclasses import replace
    if all(layer.deployed is None for layer in model.layers):
        return model
    return replace(model, layers=tuple(replace(layer, deployed=None) for layer in model.layers))


# ----------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 5e-3
    weight_decay: float = 0.0
    seed: int = 0
    quant: Optional[QuantSpec] = None
    noise: Optional[NoiseSpec] = None
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")


def _evaluate(p, hyper, channels, u, labels, quant, batch_size=256):
    total, correct = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(u), batch_size):
            logits = torch_forward(p, hyper, channels, u[i:i + batch_size], quant)
            lab = labels[i:i + batch_size]
            total += float(_ce(logits, lab)) * len(lab)
            correct += int((logits.argmax(dim=-1).numpy() == lab).sum())
    return total / len(u), 100.0 * correct / len(u)


def train(model: ModelParams, data, config: TrainConfig):
    """Adam training; returns ``(best_validation_model, log_rows)``.

    ``data`` is ``(u_train, y_train, u_val, y_val)``. Log rows are dicts with
    the keys of :data:`LOG_COLUMNS`.
    """
    u_tr, y_tr, u_val, y_val = (np.asarray(a) for a in data)
    torch.set_num_threads(max(1, int(config.threads)))
    hyper = model.hyper
    names = trainable_names(hyper)
    model = _strip_deployed(model)
    arrays = to_arrays(model)
    p = to_torch(arrays, names, requires_grad=True)
    channels = [layer.channels for layer in model.layers]
    decay = [p[n] for n in names if n.endswith(("enc_w", "mix_w", "dec_w"))]
    rest = [p[n] for n in names if not n.endswith(("enc_w", "mix_w", "dec_w"))]
    opt = torch.optim.AdamW([{"params": decay, "weight_decay": config.weight_decay},
                             {"params": rest, "weight_decay": 0.0}], lr=config.lr)
    rng = np.random.default_rng(config.seed)
    noise = _training_noise(config.noise)
    quant = config.quant

    def snapshot():
        return from_arrays(hyper, {k: v.detach().numpy().copy() for k, v in p.items()}, channels)

    best = snapshot()
    best_acc = -1.0
    rows = []
    t0 = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(u_tr))
        tot, correct = 0.0, 0
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            opt.zero_grad()
            logits = torch_forward(p, hyper, channels, u_tr[idx], quant, noise, rng)
            batch_loss = _ce(logits, y_tr[idx])
            if not torch.isfinite(batch_loss):
                raise TrainingDiverged(f"loss became non-finite in epoch {epoch}")
            batch_loss.backward()
            opt.step()
            tot += float(batch_loss.detach()) * len(idx)
            correct += int((logits.detach().argmax(dim=-1).numpy() == y_tr[idx]).sum())
        val_loss, val_acc = _evaluate(p, hyper, channels, u_val, y_val, quant)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"validation loss became non-finite in epoch {epoch}")
        row = {"epoch": epoch, "train_loss": tot / len(u_tr), "train_acc": 100.0 * correct / len(u_tr),
               "val_loss": val_loss, "val_acc": val_acc, "wall_seconds": time.perf_counter() - t0}
        rows.append(row)
        log.info("epoch %d train_loss %.4f val_acc %.2f", epoch, row["train_loss"], val_acc)
        if val_acc > best_acc:
            best_acc, best = val_acc, snapshot()
    return best, rows
