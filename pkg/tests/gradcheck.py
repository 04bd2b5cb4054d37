"""Central finite differences against the torch gradients, with frozen quantizer offsets."""

import numpy as np
import torch

from qs4d.model import to_arrays
from qs4d.train import STE, _ce, to_torch, torch_forward, trainable_names


def group_errors(model, u, labels, quant=None, h=1e-5):
    """Relative error ``|g_fd - g| / |g_fd|`` (vector norms) for every trainable tensor."""
    hyper = model.hyper
    channels = [layer.channels for layer in model.layers]
    names = trainable_names(hyper)
    arrays = to_arrays(model)
    p = to_torch(arrays, names, requires_grad=True)
    ste = STE(record=True)
    _ce(torch_forward(p, hyper, channels, u, quant, ste=ste), labels).backward()
    analytic = {n: p[n].grad.numpy().copy() for n in names}

    def loss_at(arrs):
        with torch.no_grad():
            q = to_torch(arrs)
            return float(_ce(torch_forward(q, hyper, channels, u, quant, ste=STE(replay=ste.offsets)), labels))

    errors = {}
    for n in names:
        fd = np.zeros_like(arrays[n])
        for idx in np.ndindex(arrays[n].shape):
            plus = dict(arrays)
            minus = dict(arrays)
            plus[n] = arrays[n].copy()
            minus[n] = arrays[n].copy()
            plus[n][idx] += h
            minus[n][idx] -= h
            fd[idx] = (loss_at(plus) - loss_at(minus)) / (2 * h)
        denom = max(np.linalg.norm(fd), 1e-12)
        errors[n] = np.linalg.norm(fd - analytic[n]) / denom if np.linalg.norm(fd) > 1e-10 else \
            np.linalg.norm(analytic[n])
    return errors
