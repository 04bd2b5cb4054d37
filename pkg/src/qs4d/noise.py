"""Transient Gaussian perturbation of kernel parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NOISE_TARGETS = ("A", "B", "C")
NOISE_WHEN = ("inference-only", "training-and-inference")


@dataclass(frozen=True)
class NoiseSpec:
    """Noise std is ``sigma`` times ``max|w|`` of each targeted tensor (re/im separately)."""

    sigma: float = 0.0
    target: tuple = NOISE_TARGETS
    when: str = "inference-only"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.when not in NOISE_WHEN:
            raise ValueError(f"noise 'when' must be one of {NOISE_WHEN}")
        bad = set(self.target) - set(NOISE_TARGETS)
        if bad:
            raise ValueError(f"unknown noise targets {sorted(bad)}")
        object.__setattr__(self, "target", tuple(self.target))

    @property
    def in_training(self) -> bool:
        return self.when == "training-and-inference"


def _perturb(w, sigma, rng):
    scale = sigma * np.max(np.abs(w)) if w.size else 0.0
    return w + rng.normal(0.0, 1.0, size=w.shape) * scale


def perturb_tensor(w, sigma: float, rng) -> np.ndarray:
    if sigma == 0:
        return w
    if np.iscomplexobj(w):
        return _perturb(w.real, sigma, rng) + 1j * _perturb(w.imag, sigma, rng)
    return _perturb(np.asarray(w, dtype=np.float64), sigma, rng)


def inject_weight_noise(params: dict, spec: NoiseSpec, rng) -> dict:
    """Return a perturbed copy of ``params`` (keys ``"A"``, ``"B"``, ``"C"``); inputs are not mutated.

    Targets are drawn in the fixed order A, B, C so a seeded generator gives
    reproducible noise.
    """
    if spec is None or spec.sigma == 0:
        return dict(params)
    out = dict(params)
    for key in NOISE_TARGETS:
        if key in spec.target and key in params:
            out[key] = perturb_tensor(params[key], spec.sigma, rng)
    return out
