"""``qs4d`` command line.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from . import experiments as ex
from .config import Config, ConfigError, load_config, template
from .quant import QuantSpec
from .train import TrainingDiverged

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _words(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qs4d", description="Quantized diagonal state-space models: "
                                "training, sweeps, hardware metrics, pruning and crossbar simulation.")
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--out", type=Path, help="output directory (overrides out.dir)")
    p.add_argument("--seed", type=int, help="overrides train.seed")
    p.add_argument("--threads", type=int, default=1, help="torch intra-op threads")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train one model and save a checkpoint")
    s.add_argument("--timing", action="store_true", help="fill wall_seconds in the log (not reproducible)")

    s = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    s.add_argument("checkpoint", type=Path)
    s.add_argument("--mode", default="convolutional", choices=("convolutional", "recurrent", "imssa"))
    s.add_argument("--quant", help='override quantization, e.g. "A=4,state=8"')

    s = sub.add_parser("sweep-quant", help="accuracy vs bit width per parameter group")
    s.add_argument("--groups", type=_words, default=["all"])
    s.add_argument("--bits", type=_ints, default=[16, 12, 10, 8, 6, 5, 4, 3, 2])
    s.add_argument("--method", choices=("ptq", "qat"), default="ptq")
    s.add_argument("--checkpoint", type=Path, help="float baseline (required for ptq)")
    s.add_argument("--seeds", type=_ints, help="training seeds for qat")

    s = sub.add_parser("sweep-noise", help="accuracy vs relative weight noise")
    s.add_argument("--sigmas", type=_floats, default=[0.0, 0.01, 0.02, 0.05, 0.1])
    s.add_argument("--quant-bits", type=_words, default=["float", "8", "5"])
    s.add_argument("--train-noise", action="store_true", help="train each point with matching noise")

    s = sub.add_parser("sweep-size", help="accuracy vs state size and width")
    s.add_argument("--N", type=_ints, default=[4, 8, 16, 32, 64])
    s.add_argument("--H", type=_ints, default=[8])
    s.add_argument("--quant-bits", type=_words, default=["float", "8", "6"])

    s = sub.add_parser("metrics", help="ACE, memory and ADC report as JSON")
    s.add_argument("--checkpoint", type=Path)
    s.add_argument("--debug", action="store_true", help="also report the alternative coder reading")

    s = sub.add_parser("prune", help="structural plus optional unstructured pruning")
    s.add_argument("checkpoint", type=Path)
    s.add_argument("--budget", type=float, help="accuracy drop budget in points")

    s = sub.add_parser("crossbar", help="evaluate a checkpoint on simulated crossbar arrays")
    s.add_argument("checkpoint", type=Path)
    s.add_argument("--seeds", type=int, help="number of device seeds per scaling mode")
    s.add_argument("--scaling", type=_words, default=["common-max", "per-parameter"])
    s.add_argument("--quant", help='deployment quantization, e.g. "A=4,B=4,C=4,state=8,act=8" '
                   "(kernel domain kept from the checkpoint)")

    sub.add_parser("gen-data", help="write the configured dataset in the raw format")
    sub.add_parser("template", help="print a config template with every key and its default")
    return p


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value)
    if args.seed is not None:
        cfg.set("train.seed", args.seed)
    if args.out is not None:
        cfg.set("out.dir", str(args.out))
    return cfg


def run(args) -> int:
    if args.command == "template":
        sys.stdout.write(template())
        return EXIT_OK
    cfg = _config(args)
    torch.set_num_threads(max(1, args.threads))
    out = Path(cfg["out.dir"])
    cmd = args.command
    if cmd == "train":
        _, _, acc = ex.cmd_train(cfg, out, timing=args.timing)
        print(f"test accuracy {acc:.2f}  checkpoint {out / 'checkpoint'}")
    elif cmd == "eval":
        try:
            quant = QuantSpec.parse(args.quant) if args.quant else None
        except ValueError as e:
            raise ConfigError(f"--quant: {e}") from None
        for row in ex.cmd_eval(cfg, args.checkpoint, out, args.mode, quant):
            print(f"{row['mode']} {row['quant']} accuracy {row['accuracy']:.2f}")
    elif cmd == "sweep-quant":
        _, summary = ex.cmd_sweep_quant(cfg, out, args.groups, args.bits, args.method, args.checkpoint, args.seeds)
        for row in summary:
            print(f"{row['group']} {row['method']} min bits below {row['threshold']}: "
                  f"{row['min_bits_below_threshold']}")
    elif cmd == "sweep-noise":
        ex.cmd_sweep_noise(cfg, out, args.sigmas, args.quant_bits, args.train_noise)
    elif cmd == "sweep-size":
        ex.cmd_sweep_size(cfg, out, args.N, args.H, args.quant_bits)
    elif cmd == "metrics":
        report = ex.cmd_metrics(cfg, out, args.checkpoint, args.debug)
        sys.stdout.write(report.to_json())
    elif cmd == "prune":
        rows, _ = ex.cmd_prune(cfg, out, args.checkpoint, args.budget)
        for row in rows:
            print(f"layer {row['layer']}: pruned {row['kernels_pruned']}/{row['kernels_total']} kernels, "
                  f"accuracy {row['accuracy_before']:.2f} -> {row['accuracy_after']:.2f}")
    elif cmd == "crossbar":
        _, summary = ex.cmd_crossbar(cfg, out, args.checkpoint, args.seeds, args.scaling, args.quant)
        for row in summary:
            print(f"{row['scaling']}: mean {row['mean']:.2f} (noiseless {row['noiseless']:.2f}, "
                  f"software {row['software']:.2f})")
    elif cmd == "gen-data":
        print(ex.cmd_gen_data(cfg, out))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
