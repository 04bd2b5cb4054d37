"""Flat experiment configuration: ``section.key = value`` lines, ``#`` comments.

Every accepted key is listed in :data:`DEFAULTS`; anything else is rejected.
"""

from __future__ import annotations

from pathlib import Path

from .model import Hyper
from .noise import NoiseSpec
from .quant import GROUPS, QuantSpec
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _bits(v: str) -> str:
    s = v.strip().lower()
    if s in ("off", "none", "float"):
        return "off"
    n = int(s)
    if n < 1:
        raise ValueError("bit widths start at 1")
    return str(n)


def _floats(v: str) -> tuple:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _opt_int(v: str):
    s = v.strip().lower()
    return None if s in ("none", "off", "inf") else int(s)


# key -> (default text, parser, help)
DEFAULTS = {
    "model.N": ("64", int, "state size per kernel"),
    "model.H": ("8", int, "model width = kernels per layer"),
    "model.n_layer": ("2", int, "number of kernel layers"),
    "model.n_in": ("1", int, "input channels"),
    "model.n_out": ("2", int, "classes"),
    "model.fixed_b": ("true", _bool, "keep B at its initial value (untrained)"),
    "model.dt_min": ("0.001", float, "lower end of the log-uniform time-step initialization"),
    "model.dt_max": ("0.1", float, "upper end of the log-uniform time-step initialization"),
    "train.epochs": ("30", int, "training epochs"),
    "train.batch_size": ("32", int, "minibatch size"),
    "train.lr": ("0.005", float, "AdamW learning rate"),
    "train.weight_decay": ("0.0", float, "weight decay on linear layers"),
    "train.seed": ("0", int, "initialization and shuffling seed"),
    "train.method": ("float", str, "float | qat (quantized training uses quant.*)"),
    "train.init_from": ("", str, "checkpoint to fine-tune from (empty trains from scratch)"),
    **{f"quant.{g}": ("off", _bits, f"bit width of group {g} or off") for g in GROUPS},
    "quant.state_mode": ("indirect-conv", str, "indirect-conv | direct-recurrent"),
    "quant.kernel_domain": ("continuous", str, "quantize continuous (a, b, c, dt) or discrete (a_bar, b_bar, c_bar)"),
    "quant.common_kernel_scale": ("false", _bool, "one grid per kernel across a_bar, b_bar, c_bar"),
    "noise.sigma": ("0.0", float, "relative weight noise"),
    "noise.when": ("inference-only", str, "inference-only | training-and-inference"),
    "noise.target": ("A,B,C", str, "comma list of kernel groups receiving noise"),
    "noise.seeds": ("5", int, "noise draws per evaluation point"),
    "data.task": ("delayed-recall", str, "delayed-recall | two-tone | raw"),
    "data.count": ("2000", int, "generated samples"),
    "data.L": ("128", int, "sequence length"),
    "data.delay": ("64", int, "delayed-recall lag"),
    "data.f0": ("0.05", float, "two-tone class-0 frequency (cycles/step)"),
    "data.f1": ("0.08", float, "two-tone class-1 frequency (cycles/step)"),
    "data.snr_db": ("10.0", float, "two-tone SNR in dB (inf for clean)"),
    "data.seed": ("0", int, "data generation seed"),
    "data.split": ("0.6,0.2", _floats, "train,validation fractions; the rest is test"),
    "data.manifest": ("", str, "manifest.csv for task=raw"),
    "prune.budget": ("1.0", float, "allowed accuracy drop in points"),
    "prune.kernel_fraction": ("0.0", float, "unstructured fraction of kernel output weights"),
    "prune.linear_fraction": ("0.0", float, "unstructured fraction of mixing weights"),
    "crossbar.g_min": ("0.0", float, "lowest conductance"),
    "crossbar.g_max": ("1.0", float, "highest conductance"),
    "crossbar.program_bits": ("3", _opt_int, "programming resolution (none for continuous)"),
    "crossbar.sigma_write": ("0.01", float, "static write noise relative to the conductance range"),
    "crossbar.sigma_read": ("0.005", float, "transient read noise relative to the conductance range"),
    "crossbar.seeds": ("10", int, "programming/read seeds per scaling mode"),
    "crossbar.size": ("64", int, "array rows and columns"),
    "crossbar.eval_count": ("0", int, "test samples used (0 for all)"),
    "out.dir": ("runs", str, "output directory"),
}
SECTIONS = ("model", "train", "quant", "noise", "data", "prune", "crossbar", "out")


class Config:
    def __init__(self, values: dict | None = None):
        self.raw = {k: v[0] for k, v in DEFAULTS.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        text = str(value).strip()
        try:
            DEFAULTS[key][1](text)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for {key}: {text!r} ({e})") from None
        self.raw[key] = text

    def __getitem__(self, key: str):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        return DEFAULTS[key][1](self.raw[key])

    def section(self, name: str) -> dict:
        return {k.split(".", 1)[1]: self[k] for k in DEFAULTS if k.startswith(name + ".")}

    # typed views -----------------------------------------------------------

    def hyper(self) -> Hyper:
        try:
            return Hyper(**self.section("model"))
        except ValueError as e:
            raise ConfigError(f"model: {e}") from None

    def quant(self) -> QuantSpec:
        q = self.section("quant")
        try:
            return QuantSpec(**{g: (None if q[g] == "off" else int(q[g])) for g in GROUPS},
                             state_mode=q["state_mode"], kernel_domain=q["kernel_domain"],
                             common_kernel_scale=q["common_kernel_scale"])
        except ValueError as e:
            raise ConfigError(f"quant: {e}") from None

    def noise(self) -> NoiseSpec:
        n = self.section("noise")
        try:
            return NoiseSpec(n["sigma"], tuple(t.strip() for t in n["target"].split(",") if t.strip()), n["when"])
        except ValueError as e:
            raise ConfigError(f"noise: {e}") from None

    def train_config(self, quant: QuantSpec | None = None, noise: NoiseSpec | None = None) -> TrainConfig:
        t = self.section("train")
        if t["method"] not in ("float", "qat"):
            raise ConfigError("train.method must be float or qat")
        if quant is None and t["method"] == "qat":
            quant = self.quant()
        if noise is None and self["noise.sigma"] > 0 and self["noise.when"] == "training-and-inference":
            noise = self.noise()
        t.pop("init_from")
        try:
            return TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"],
                               weight_decay=t["weight_decay"], seed=t["seed"], quant=quant, noise=noise)
        except ValueError as e:
            raise ConfigError(f"train: {e}") from None

    # text form -----------------------------------------------------------

    def dumps(self, comments: bool = True) -> str:
        lines = []
        for sec in SECTIONS:
            lines.append(f"# [{sec}]")
            for k, (_, _, doc) in DEFAULTS.items():
                if k.startswith(sec + "."):
                    if comments:
                        lines.append(f"# {doc}")
                    lines.append(f"{k} = {self.raw[k]}")
            lines.append("")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return dict(self.raw)


def parse_config(text: str, source: str = "<config>") -> Config:
    cfg = Config()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        try:
            cfg.set(key.strip(), value)
        except ConfigError as e:
            raise ConfigError(f"{source}:{n}: {e}") from None
    return cfg


def load_config(path) -> Config:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def template() -> str:
    return Config().dumps()
