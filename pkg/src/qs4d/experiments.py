"""Experiment families behind the command line: training, sweeps, pruning, metrics, crossbar runs.

Every function writes CSV files with a fixed header (see the ``*_COLUMNS``
constants) and returns the rows it wrote. Floats are written with a fixed
format so that repeated runs with the same seeds give identical bytes.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import crossbar as xb
from .config import Config, ConfigError
from .data import Dataset, gen_delayed_recall, gen_two_tone, load_raw, write_raw
from .metrics import compute_metrics
from .model import accuracy, init_model, load_checkpoint, checkpoint_quant, save_checkpoint
from .noise import NoiseSpec
from .prune import (materialize, prune_structural, prune_unstructured, pruning_report, write_report)
from .quant import GROUPS, QuantSpec
from .train import LOG_COLUMNS, TrainingDiverged, train

log = logging.getLogger(__name__)

QUANT_COLUMNS = ("group", "bits", "method", "seed", "accuracy", "baseline_accuracy",
                 "additional_error", "status")
QUANT_SUMMARY_COLUMNS = ("group", "method", "min_bits_below_threshold", "threshold")
NOISE_COLUMNS = ("sigma", "quant_bits", "trained_with_noise", "acc_mean", "acc_std", "n_seeds", "status")
SIZE_COLUMNS = ("N", "H", "bits", "accuracy", "status")
CROSSBAR_COLUMNS = ("seed", "scaling", "accuracy")
CROSSBAR_SUMMARY_COLUMNS = ("scaling", "mean", "std", "min", "max", "noiseless", "software")
EVAL_COLUMNS = ("mode", "quant", "accuracy")
ERROR_THRESHOLD = 1.0  # percentage points of additional error


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if not np.isfinite(v) else f"{float(v):.6f}"
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Sequence[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c, "")) for c in columns])
    return path


# ----------------------------------------------------------------------------
# data and training


def make_data(cfg: Config):
    """``(train, validation, test)`` datasets for the configured task."""
    task = cfg["data.task"]
    if task == "delayed-recall":
        ds = gen_delayed_recall(cfg["data.count"], cfg["data.L"], cfg["data.delay"], cfg["data.seed"])
    elif task == "two-tone":
        ds = gen_two_tone(cfg["data.count"], cfg["data.L"], cfg["data.f0"], cfg["data.f1"],
                          cfg["data.snr_db"], cfg["data.seed"])
    elif task == "raw":
        if not cfg["data.manifest"]:
            raise ConfigError("data.manifest is required for data.task = raw")
        ds = load_raw(cfg["data.manifest"])
    else:
        raise ConfigError(f"data.task must be delayed-recall, two-tone or raw, got {task!r}")
    split = cfg["data.split"]
    if len(split) != 2 or min(split) < 0 or sum(split) >= 1:
        raise ConfigError("data.split needs two non-negative fractions summing below 1")
    return ds.split(*split)


def fit(cfg: Config, data, quant: Optional[QuantSpec] = None, noise: Optional[NoiseSpec] = None,
        seed: Optional[int] = None, hyper=None, init=None):
    """Train one model; ``quant`` enables QAT, ``noise`` noise-aware training."""
    tr, va, _ = data
    hyper = hyper or cfg.hyper()
    seed = cfg["train.seed"] if seed is None else seed
    tc = replace(cfg.train_config(quant=QuantSpec()), quant=quant, noise=noise, seed=seed)
    model = init if init is not None else init_model(hyper, seed)
    return train(model, (tr.u, tr.labels, va.u, va.labels), tc)


def single_group_spec(group: str, bits: int, base: Optional[QuantSpec] = None) -> QuantSpec:
    """``all`` means homogeneous; otherwise only ``group`` is quantized (state rounded up to even)."""
    extra = {}
    if base is not None:
        extra = {"state_mode": base.state_mode, "kernel_domain": base.kernel_domain,
                 "common_kernel_scale": base.common_kernel_scale and group == "all"}
    h = QuantSpec.homogeneous(bits, **{k: v for k, v in extra.items() if k != "common_kernel_scale"})
    if group == "all":
        return replace(h, common_kernel_scale=extra.get("common_kernel_scale", False))
    if group not in GROUPS:
        raise ConfigError(f"unknown quantization group {group!r}")
    return QuantSpec(**{group: getattr(h, group)},
                     **{k: v for k, v in extra.items() if k != "common_kernel_scale"})


def cmd_train(cfg: Config, out: Path, timing: bool = False):
    data = make_data(cfg)
    quant = cfg.quant() if cfg["train.method"] == "qat" else None
    tc = cfg.train_config()
    init = None
    if cfg["train.init_from"]:
        init, _ = load_checkpoint(cfg["train.init_from"])
        if replace(cfg.hyper(), dt_min=init.hyper.dt_min, dt_max=init.hyper.dt_max) != init.hyper:
            raise ConfigError("train.init_from checkpoint shape differs from the model.* settings")
    model, rows = fit(cfg, data, quant=quant, noise=tc.noise, init=init)
    if not timing:
        rows = [{**r, "wall_seconds": ""} for r in rows]
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "train_log.csv", LOG_COLUMNS, rows)
    save_checkpoint(out / "checkpoint", model, quant, cfg["train.seed"], {"config": cfg.to_dict()})
    te = data[2]
    acc = accuracy(model, te.u, te.labels, quant=quant)
    write_csv(out / "eval.csv", EVAL_COLUMNS, [{"mode": "convolutional",
                                                "quant": quant.describe() if quant else "float", "accuracy": acc}])
    return model, rows, acc


def cmd_eval(cfg: Config, checkpoint, out: Path, mode: str = "convolutional", quant: Optional[QuantSpec] = None):
    model, manifest = load_checkpoint(checkpoint)
    quant = quant if quant is not None else checkpoint_quant(manifest)
    te = make_data(cfg)[2]
    acc = accuracy(model, te.u, te.labels, mode=mode, quant=quant)
    rows = [{"mode": mode, "quant": quant.describe() if quant else "float", "accuracy": acc}]
    write_csv(out / "eval.csv", EVAL_COLUMNS, rows)
    return rows


# ----------------------------------------------------------------------------
# sweeps


def threshold_summary(rows, groups, methods, threshold: float = ERROR_THRESHOLD):
    """Smallest bit width whose additional error stays below ``threshold`` (for every seed at that width)."""
    out = []
    for g in groups:
        for m in methods:
            pts = {}
            for r in rows:
                if r["group"] == g and r["method"] == m:
                    ok = r["status"] == "ok" and r["additional_error"] < threshold
                    pts[r["bits"]] = pts.get(r["bits"], True) and ok
            good = [b for b, ok in pts.items() if ok]
            out.append({"group": g, "method": m, "min_bits_below_threshold": min(good) if good else "none",
                        "threshold": threshold})
    return out


def cmd_sweep_quant(cfg: Config, out: Path, groups: Sequence[str], bits: Sequence[int], method: str,
                    checkpoint=None, seeds: Optional[Sequence[int]] = None):
    if method not in ("ptq", "qat"):
        raise ConfigError("method must be ptq or qat")
    base_spec = cfg.quant()
    data = make_data(cfg)
    te = data[2]
    seeds = list(seeds) if seeds else [cfg["train.seed"]]
    if method == "ptq" and checkpoint is None:
        raise ConfigError("ptq sweeps need --checkpoint (a float baseline)")
    rows = []
    for seed in seeds:
        if checkpoint is not None:
            baseline, _ = load_checkpoint(checkpoint)
        else:
            baseline, _ = fit(cfg, data, seed=seed)
        base_acc = accuracy(baseline, te.u, te.labels)
        for g in groups:
            for b in bits:
                spec = single_group_spec(g, b, base_spec)
                row = {"group": g, "bits": b, "method": method, "seed": seed, "baseline_accuracy": base_acc}
                try:
                    if method == "ptq":
                        model = baseline
                    else:
                        model, _ = fit(cfg, data, quant=spec, seed=seed)
                    acc = accuracy(model, te.u, te.labels, quant=spec)
                    row.update(accuracy=acc, additional_error=base_acc - acc, status="ok")
                except (TrainingDiverged, FloatingPointError) as e:
                    row.update(accuracy=float("nan"), additional_error=float("nan"), status=f"failed: {e}")
                log.info("sweep-quant %s", row)
                rows.append(row)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"sweep_quant_{method}.csv", QUANT_COLUMNS, rows)
    summary = threshold_summary(rows, groups, [method])
    write_csv(out / f"sweep_quant_{method}_summary.csv", QUANT_SUMMARY_COLUMNS, summary)
    return rows, summary


def noisy_accuracy(model, u, labels, quant, sigma: float, seeds: int, base_seed: int = 0, target=("A", "B", "C")):
    """Mean and std of accuracy over ``seeds`` independent noise draws."""
    if sigma == 0:
        acc = accuracy(model, u, labels, quant=quant)
        return acc, 0.0, [acc]
    accs = []
    for s in range(seeds):
        noise = NoiseSpec(sigma, tuple(target))
        accs.append(accuracy(model, u, labels, quant=quant, noise=noise,
                             rng=np.random.default_rng([base_seed, s])))
    return float(np.mean(accs)), float(np.std(accs)), accs


def _bits_spec(q) -> Optional[QuantSpec]:
    return None if q in (None, "float", "off") else QuantSpec.homogeneous(int(q))


def cmd_sweep_noise(cfg: Config, out: Path, sigmas: Sequence[float], quants: Sequence, train_noise: bool = False):
    data = make_data(cfg)
    te = data[2]
    seeds = cfg["noise.seeds"]
    target = cfg.noise().target
    rows = []
    for q in quants:
        spec = _bits_spec(q)
        shared = None
        for sigma in sigmas:
            row = {"sigma": sigma, "quant_bits": q, "trained_with_noise": int(bool(train_noise and sigma > 0)),
                   "n_seeds": seeds if sigma > 0 else 1}
            try:
                if train_noise and sigma > 0:
                    model, _ = fit(cfg, data, quant=spec,
                                   noise=NoiseSpec(sigma, target, "training-and-inference"))
                else:
                    if shared is None:
                        shared, _ = fit(cfg, data, quant=spec)
                    model = shared
                mean, std, _ = noisy_accuracy(model, te.u, te.labels, spec, sigma, seeds,
                                              cfg["train.seed"], target)
                row.update(acc_mean=mean, acc_std=std, status="ok")
            except (TrainingDiverged, FloatingPointError) as e:
                row.update(acc_mean=float("nan"), acc_std=float("nan"), status=f"failed: {e}")
            rows.append(row)
    write_csv(out / "sweep_noise.csv", NOISE_COLUMNS, rows)
    return rows


def cmd_sweep_size(cfg: Config, out: Path, Ns: Sequence[int], Hs: Sequence[int], quants: Sequence):
    data = make_data(cfg)
    te = data[2]
    base = cfg.hyper()
    rows = []
    for N in Ns:
        for H in Hs:
            for q in quants:
                spec = _bits_spec(q)
                row = {"N": N, "H": H, "bits": q}
                try:
                    model, _ = fit(cfg, data, quant=spec, hyper=replace(base, N=N, H=H))
                    row.update(accuracy=accuracy(model, te.u, te.labels, quant=spec), status="ok")
                except (TrainingDiverged, FloatingPointError) as e:
                    row.update(accuracy=float("nan"), status=f"failed: {e}")
                rows.append(row)
    write_csv(out / "sweep_size.csv", SIZE_COLUMNS, rows)
    return rows


# ----------------------------------------------------------------------------
# metrics, pruning, crossbar


def cmd_metrics(cfg: Config, out: Path, checkpoint=None, debug: bool = False):
    if checkpoint is not None:
        model, manifest = load_checkpoint(checkpoint)
        hyper, quant, kernels = model.hyper, checkpoint_quant(manifest), model.kernels_per_layer
    else:
        hyper, quant, kernels = cfg.hyper(), cfg.quant(), None
    report = compute_metrics(hyper, quant, kernels, debug=debug)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.to_json())
    return report


def cmd_prune(cfg: Config, out: Path, checkpoint, budget: Optional[float] = None):
    model, manifest = load_checkpoint(checkpoint)
    quant = checkpoint_quant(manifest)
    budget = cfg["prune.budget"] if budget is None else budget
    _, va, te = make_data(cfg)
    res = prune_structural(model, budget, va.u, va.labels, quant)
    pruned = res.model
    if cfg["prune.kernel_fraction"] > 0:
        pruned = prune_unstructured(pruned, cfg["prune.kernel_fraction"], "kernel")
    if cfg["prune.linear_fraction"] > 0:
        pruned = prune_unstructured(pruned, cfg["prune.linear_fraction"], "linear")
    qmodel, runtime = materialize(model, quant)
    res.accuracy_before = accuracy(qmodel, te.u, te.labels, quant=runtime)
    res.accuracy_after = accuracy(pruned, te.u, te.labels, quant=runtime)
    rows = pruning_report(model, res, pruned)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "prune_report.csv", rows)
    save_checkpoint(out / "pruned", pruned, runtime, manifest.get("seed"), {"source": str(checkpoint)})
    return rows, res


def device_from(cfg: Config) -> xb.DeviceModel:
    return xb.DeviceModel(cfg["crossbar.g_min"], cfg["crossbar.g_max"], cfg["crossbar.program_bits"],
                          cfg["crossbar.sigma_write"], cfg["crossbar.sigma_read"])


def crossbar_accuracy(model, quant, u, labels, device, scaling, seed, size=xb.DEFAULT_SIZE):
    bank = xb.CrossbarKernelBank(model, device, scaling, quant, seed, size)
    runtime = QuantSpec(act=quant.act if quant else None)
    return accuracy(model if quant is None else materialize(model, quant)[0], u, labels,
                    quant=runtime, kernel_runner=bank, batch_size=len(u))


def cmd_crossbar(cfg: Config, out: Path, checkpoint, seeds: Optional[int] = None,
                 scalings: Sequence[str] = xb.SCALINGS, quant_text: Optional[str] = None):
    """``quant_text`` replaces the checkpoint's bit widths (kernel domain and
    common-scale flag are kept), e.g. to add the per-step state quantizer."""
    model, manifest = load_checkpoint(checkpoint)
    quant = checkpoint_quant(manifest)
    if quant_text:
        base = quant or QuantSpec()
        try:
            quant = QuantSpec.parse(quant_text, kernel_domain=base.kernel_domain,
                                    common_kernel_scale=base.common_kernel_scale)
        except ValueError as e:
            raise ConfigError(f"--quant: {e}") from None
    te = make_data(cfg)[2]
    n = cfg["crossbar.eval_count"]
    u, labels = (te.u[:n], te.labels[:n]) if n > 0 else (te.u, te.labels)
    device = device_from(cfg)
    quiet = replace(device, sigma_write=0.0, sigma_read=0.0)
    seeds = cfg["crossbar.seeds"] if seeds is None else seeds
    # the array runs the recurrence, so the software reference does too
    software = accuracy(model, u, labels, quant=quant, mode="recurrent")
    rows, summary = [], []
    for scaling in scalings:
        accs = []
        for s in range(seeds):
            acc = crossbar_accuracy(model, quant, u, labels, device, scaling, s, cfg["crossbar.size"])
            rows.append({"seed": s, "scaling": scaling, "accuracy": acc})
            accs.append(acc)
        ideal = crossbar_accuracy(model, quant, u, labels, quiet, scaling, 0, cfg["crossbar.size"])
        summary.append({"scaling": scaling, "mean": float(np.mean(accs)), "std": float(np.std(accs)),
                        "min": float(np.min(accs)), "max": float(np.max(accs)),
                        "noiseless": ideal, "software": software})
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "crossbar.csv", CROSSBAR_COLUMNS, rows)
    write_csv(out / "crossbar_summary.csv", CROSSBAR_SUMMARY_COLUMNS, summary)
    return rows, summary


def cmd_gen_data(cfg: Config, out: Path):
    """Write the configured dataset (all splits concatenated) in the raw format."""
    parts = make_data(cfg)
    ds = Dataset(np.concatenate([p.u for p in parts]), np.concatenate([p.labels for p in parts]))
    return write_raw(out / "data", ds)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path
