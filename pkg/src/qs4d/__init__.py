"""Quantized diagonal state-space models with hardware metrics, pruning and crossbar simulation."""

from .kernel import DiscreteKernel, KernelParams, discretize_zoh
from .model import Hyper, ModelParams, accuracy, forward, init_model
from .quant import QuantSpec, apply_ptq, quantize

__all__ = ["DiscreteKernel", "KernelParams", "discretize_zoh", "Hyper", "ModelParams", "accuracy",
           "forward", "init_model", "QuantSpec", "apply_ptq", "quantize"]
__version__ = "0.1.0"
