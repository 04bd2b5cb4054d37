"""Diagonal state-space kernel math.

A kernel is a diagonal complex system ``x' = a x + b u``, ``y = 2 Re(c . x) + d u``
discretized with zero-order hold. Everything here is plain numpy and pure.
Array helpers broadcast over leading axes so a whole bank of kernels
(shape ``(H, N)``) can be handled in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ZERO_A_EPS = 1e-8


@dataclass(frozen=True)
class KernelParams:
    """Continuous parameters of one kernel.

    ``a`` is stored as ``(log_neg_real, imag)`` so that ``Re(a) = -exp(log_neg_real)``
    stays negative for any real value of the stored parameter.
    """

    log_neg_real: np.ndarray
    imag: np.ndarray
    b: np.ndarray
    c: np.ndarray
    log_dt: float
    d: float = 0.0

    def __post_init__(self):
        n = np.shape(self.log_neg_real)[0] if np.ndim(self.log_neg_real) else 0
        if n < 1:
            raise ValueError("state size N must be >= 1")
        for name in ("imag", "b", "c"):
            if np.shape(getattr(self, name)) != (n,):
                raise ValueError(f"{name} must have shape ({n},)")

    @classmethod
    def from_continuous(cls, a, b, c, dt: float, d: float = 0.0) -> "KernelParams":
        a = np.atleast_1d(np.asarray(a, dtype=np.complex128))
        if np.any(a.real >= 0):
            raise ValueError("Re(a) must be strictly negative")
        if not dt > 0:
            raise ValueError("dt must be positive")
        return cls(
            log_neg_real=np.log(-a.real),
            imag=a.imag.copy(),
            b=np.atleast_1d(np.asarray(b, dtype=np.complex128)),
            c=np.atleast_1d(np.asarray(c, dtype=np.complex128)),
            log_dt=float(np.log(dt)),
            d=float(d),
        )

    @property
    def a(self) -> np.ndarray:
        return -np.exp(self.log_neg_real) + 1j * self.imag

    @property
    def dt(self) -> float:
        return float(np.exp(self.log_dt))

    @property
    def N(self) -> int:
        return len(self.log_neg_real)


@dataclass(frozen=True)
class DiscreteKernel:
    a_bar: np.ndarray
    b_bar: np.ndarray
    c_bar: np.ndarray
    d_bar: float = 0.0

    @property
    def N(self) -> int:
        return len(self.a_bar)


def zoh(a, dt, b, eps: float = ZERO_A_EPS):
    """Element-wise ZOH for diagonal systems; ``dt`` broadcasts against ``a``.

    Returns ``(a_bar, b_bar)``. Entries with ``|a| < eps`` use the analytic
    limit ``b_bar = dt * b``.
    """
    a = np.asarray(a, dtype=np.complex128)
    dt = np.asarray(dt, dtype=np.float64)
    b = np.asarray(b, dtype=np.complex128)
    a_bar = np.exp(dt * a)
    small = np.abs(a) < eps
    safe_a = np.where(small, 1.0, a)
    b_bar = np.where(small, dt * b, (a_bar - 1.0) / safe_a * b)
    return a_bar, b_bar


def discretize_zoh(p: KernelParams, eps: float = ZERO_A_EPS) -> DiscreteKernel:
    if not p.dt > 0:
        raise ValueError("dt must be positive")
    a_bar, b_bar = zoh(p.a, p.dt, p.b, eps)
    return DiscreteKernel(a_bar, b_bar, np.asarray(p.c, dtype=np.complex128).copy(), float(p.d))


def real_projection(c, x):
    """``2 Re(sum_n c_n x_n)`` over the last axis."""
    return 2.0 * np.real(np.sum(c * x, axis=-1))


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite {what}")


def kernel_step(k: DiscreteKernel, x_prev, u_t: float):
    x_prev = np.asarray(x_prev, dtype=np.complex128)
    if x_prev.shape[-1] != k.N:
        raise ValueError(f"state length {x_prev.shape[-1]} != N={k.N}")
    x = k.a_bar * x_prev + k.b_bar * u_t
    _check_finite(x, "state")
    y = real_projection(k.c_bar, x) + k.d_bar * u_t
    return x, y


def imssa_step(k: DiscreteKernel, x_prev, u_t: float):
    """Single-array variant: the output is read from the *previous* state."""
    x_prev = np.asarray(x_prev, dtype=np.complex128)
    if x_prev.shape[-1] != k.N:
        raise ValueError(f"state length {x_prev.shape[-1]} != N={k.N}")
    x = k.a_bar * x_prev + k.b_bar * u_t
    _check_finite(x, "state")
    y_prev = real_projection(k.c_bar, x_prev) + k.d_bar * u_t
    return x, y_prev


def scan(k: DiscreteKernel, u, x0=None, step=kernel_step):
    """Run ``step`` over a 1-D input sequence, returning the output sequence."""
    u = np.asarray(u, dtype=np.float64)
    x = np.zeros(k.N, dtype=np.complex128) if x0 is None else np.asarray(x0, dtype=np.complex128)
    ys = np.empty(len(u))
    for t, u_t in enumerate(u):
        x, ys[t] = step(k, x, u_t)
    return ys


def imssa_scan(k: DiscreteKernel, u, x0=None):
    return scan(k, u, x0, step=imssa_step)


def conv_kernel(a_bar, b_bar, c_bar, L: int):
    """Materialize ``K_j = 2 Re(c . a^j b)`` for ``j < L``; shapes ``(..., N) -> (..., L)``.

    Powers come from a cumulative product, in complex128.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    a_bar = np.asarray(a_bar, dtype=np.complex128)
    b_bar = np.asarray(b_bar, dtype=np.complex128)
    shape = np.broadcast_shapes(a_bar.shape, b_bar.shape)
    factors = np.empty(shape[:-1] + (L,) + shape[-1:], dtype=np.complex128)
    factors[..., 0, :] = b_bar
    factors[..., 1:, :] = a_bar[..., None, :]
    powers = np.cumprod(factors, axis=-2)
    return 2.0 * np.real(np.einsum("...ln,...n->...l", powers, np.asarray(c_bar, dtype=np.complex128)))


def materialize_conv_kernel(k: DiscreteKernel, L: int) -> np.ndarray:
    return conv_kernel(k.a_bar, k.b_bar, k.c_bar, L)


def conv_apply(K, u):
    """Causal convolution ``y_t = sum_{j<=t} K_j u_{t-j}`` through a 2L-point real FFT."""
    K = np.asarray(K, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if K.shape[-1] != u.shape[-1]:
        raise ValueError(f"length mismatch: kernel {K.shape[-1]} vs input {u.shape[-1]}")
    L = u.shape[-1]
    n = 2 * L
    y = np.fft.irfft(np.fft.rfft(K, n=n) * np.fft.rfft(u, n=n), n=n)
    return y[..., :L]


def conv_direct(K, u):
    """Direct-summation causal convolution (O(L^2)); the reference path for ``conv_apply``."""
    K = np.asarray(K, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if K.shape[-1] != u.shape[-1]:
        raise ValueError(f"length mismatch: kernel {K.shape[-1]} vs input {u.shape[-1]}")
    L = u.shape[-1]
    y = np.zeros(np.broadcast_shapes(K.shape, u.shape))
    for t in range(L):
        y[..., t] = np.sum(K[..., : t + 1] * u[..., t::-1], axis=-1)
    return y
