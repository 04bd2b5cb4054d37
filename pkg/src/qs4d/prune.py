"""Post-training pruning: whole kernels (structural) and magnitude pruning of elements.

Pruning acts on the quantized model: :func:`materialize` snaps the weights
once, so removing a kernel never shifts the grid of the kernels that stay.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .model import ModelParams, accuracy, apply_kernels, discretize_layer, forward
from .quant import QuantSpec, apply_ptq

REPORT_COLUMNS = ("layer", "kernels_total", "kernels_pruned", "structural_fraction",
                  "unstructured_kernel_fraction", "linear_fraction", "accuracy_before", "accuracy_after")
SCOPES = ("kernel", "linear")


def materialize(model: ModelParams, quant: Optional[QuantSpec]):
    """``(model with snapped weights, runtime-only spec)``; the spec keeps state and activation widths."""
    if quant is None or quant.is_off:
        return model, QuantSpec()
    runtime = QuantSpec(state=quant.state, act=quant.act, state_mode=quant.state_mode)
    return apply_ptq(model, quant), runtime


def rank_kernels(model: ModelParams, u, quant: Optional[QuantSpec] = None, batch_size: int = 256):
    """Per-layer importance: mean |output| of every kernel over the calibration batch."""
    u = np.asarray(u, dtype=np.float64)
    if len(u) == 0:
        raise ValueError("calibration set is empty")
    model, quant = materialize(model, quant)
    sums = [np.zeros(layer.n_kernels) for layer in model.layers]

    def runner(i, zc):
        layer = model.layers[i]
        y = apply_kernels(*discretize_layer(layer), layer.d, zc, "convolutional", quant.state)
        sums[i] += np.abs(y).mean(axis=2).sum(axis=0)
        return y

    for s in range(0, len(u), batch_size):
        forward(model, u[s:s + batch_size], quant=quant, kernel_runner=runner)
    return [t / len(u) for t in sums]


def _layer_masked(layer, drop):
    drop = np.asarray(sorted(drop), dtype=np.int64)
    if drop.size == 0:
        return layer
    c = layer.c.copy()
    c[drop] = 0
    d = layer.d.copy()
    d[drop] = 0
    mix_w = layer.mix_w.copy()
    mix_w[:, drop] = 0
    deployed = layer.deployed
    if deployed is not None:
        c_bar = deployed[2].copy()
        c_bar[drop] = 0
        deployed = (deployed[0], deployed[1], c_bar)
    return replace(layer, c=c, d=d, mix_w=mix_w, deployed=deployed)


def _layer_shrunk(layer, drop):
    keep = np.setdiff1d(np.arange(layer.n_kernels), np.asarray(sorted(drop), dtype=np.int64))
    if keep.size == layer.n_kernels:
        return layer
    deployed = None if layer.deployed is None else tuple(t[keep] for t in layer.deployed)
    return replace(layer, log_neg_real=layer.log_neg_real[keep], imag=layer.imag[keep], b=layer.b[keep],
                   c=layer.c[keep], log_dt=layer.log_dt[keep], d=layer.d[keep],
                   mix_w=layer.mix_w[:, keep], channels=layer.channels[keep], deployed=deployed)


def mask_kernels(model: ModelParams, removed) -> ModelParams:
    """Zero the output weights and mixing columns of ``removed[i]`` kernels in layer ``i``."""
    return replace(model, layers=tuple(_layer_masked(layer, r) for layer, r in zip(model.layers, removed)))


def shrink_kernels(model: ModelParams, removed) -> ModelParams:
    """Delete ``removed[i]`` kernels (and their mixing columns) from layer ``i``."""
    return replace(model, layers=tuple(_layer_shrunk(layer, r) for layer, r in zip(model.layers, removed)))


@dataclass
class StructuralResult:
    model: ModelParams
    quant: QuantSpec
    removed: list
    fractions: list
    accuracy_before: float
    accuracy_after: float


def prune_structural(model: ModelParams, budget: float, u_eval, y_eval, quant: Optional[QuantSpec] = None,
                     calibration=None) -> StructuralResult:
    """Greedy removal of the globally least important kernel while the accuracy drop stays within ``budget``.

    Kernels are tried lowest score first (ties by layer, then index); the first
    removal that would exceed the budget stops the search. Every layer keeps at
    least one kernel. The returned model is shrunk and already quantized; run it
    with ``result.quant``.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    model, runtime = materialize(model, quant)
    calib = u_eval if calibration is None else calibration
    scores = rank_kernels(model, calib, runtime)
    order = sorted(((float(s), i, j) for i, layer_scores in enumerate(scores)
                    for j, s in enumerate(layer_scores)))
    base = accuracy(model, u_eval, y_eval, quant=runtime)
    removed = [set() for _ in model.layers]
    acc = base
    for _, i, j in order:
        if len(removed[i]) + 1 >= model.layers[i].n_kernels:
            continue
        removed[i].add(j)
        trial = accuracy(mask_kernels(model, removed), u_eval, y_eval, quant=runtime)
        if base - trial > budget:
            removed[i].discard(j)
            break
        acc = trial
    fractions = [len(r) / layer.n_kernels for r, layer in zip(removed, model.layers)]
    removed = [sorted(r) for r in removed]
    return StructuralResult(shrink_kernels(model, removed), runtime, removed, fractions, base, acc)


def _bottom_mask(mag, fraction):
    """Boolean mask of the ``round(fraction * n)`` smallest entries (stable order)."""
    flat = mag.ravel()
    k = int(round(fraction * flat.size))
    mask = np.zeros(flat.size, dtype=bool)
    mask[np.argsort(flat, kind="stable")[:k]] = True
    return mask.reshape(mag.shape)


def prune_unstructured(model: ModelParams, fraction: float, scope: str = "kernel") -> ModelParams:
    """Zero the smallest-magnitude ``fraction`` of each layer's output weights (``kernel``) or mixing matrix (``linear``)."""
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must be in [0, 1]")
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    layers = []
    for layer in model.layers:
        if scope == "linear":
            w = layer.mix_w.copy()
            w[_bottom_mask(np.abs(w), fraction)] = 0
            layers.append(replace(layer, mix_w=w))
            continue
        c_eff = layer.c if layer.deployed is None else layer.deployed[2]
        mask = _bottom_mask(np.abs(c_eff), fraction)
        c = layer.c.copy()
        c[mask] = 0
        deployed = layer.deployed
        if deployed is not None:
            c_bar = deployed[2].copy()
            c_bar[mask] = 0
            deployed = (deployed[0], deployed[1], c_bar)
        layers.append(replace(layer, c=c, deployed=deployed))
    return replace(model, layers=tuple(layers))


def zero_fraction(x) -> float:
    x = np.asarray(x)
    return float(np.mean(x == 0)) if x.size else 0.0


def pruning_report(original: ModelParams, result: StructuralResult, pruned: Optional[ModelParams] = None) -> list:
    """Rows keyed by :data:`REPORT_COLUMNS`; ``pruned`` is the final model if unstructured pruning followed."""
    final = pruned if pruned is not None else result.model
    rows = []
    for i, (layer0, layer) in enumerate(zip(original.layers, final.layers)):
        c_eff = layer.c if layer.deployed is None else layer.deployed[2]
        rows.append({
            "layer": i,
            "kernels_total": layer0.n_kernels,
            "kernels_pruned": len(result.removed[i]),
            "structural_fraction": result.fractions[i],
            "unstructured_kernel_fraction": zero_fraction(c_eff),
            "linear_fraction": zero_fraction(layer.mix_w),
            "accuracy_before": result.accuracy_before,
            "accuracy_after": result.accuracy_after,
        })
    return rows


def write_report(path, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return path
