"""Classic iterative deconvolution baselines."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .fftconv import adjoint_convolve, as_kernel, convolve
from .imaging import as_image

RL_EPS = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    step_size: float = 0.8
    iterations: int = 1000
    nonneg_projection: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not self.nonneg_projection and self.step_size >= 2:
            raise ValueError("step_size must be < 2 without projection")


def _prepare(y, h):
    y, h = as_image(y), as_kernel(h)
    if h.shape[0] > y.shape[0] or h.shape[1] > y.shape[1]:
        raise ValueError(f"kernel {h.shape} does not fit image {y.shape}")
    return y, h


def landweber(y, h, cfg=SolverConfig(), callback=None):
    """Landweber iteration x <- x + step * H^T (y - H x), started from x = y.

    ``callback(k, x)`` is called after every step if given.
    """
    y, h = _prepare(y, h)
    x = y.copy()
    for k in range(cfg.iterations):
        x = x + cfg.step_size * adjoint_convolve(y - convolve(x, h), h)
        if cfg.nonneg_projection:
            np.maximum(x, 0.0, out=x)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"landweber: non-finite iterate at iteration {k + 1}")
        if callback is not None:
            callback(k + 1, x)
    return x


def richardson_lucy(y, h, iterations=1000, callback=None):
    """Richardson-Lucy multiplicative updates, started from x = y."""
    y, h = _prepare(y, h)
    if iterations < 1:
        raise ValueError("iterations must be positive")
    if np.any(y < 0):
        warnings.warn("richardson_lucy: negative input clamped to 0", stacklevel=2)
        y = np.maximum(y, 0.0)
    x = y.copy()
    for k in range(iterations):
        ratio = y / (convolve(x, h) + RL_EPS)
        x = x * adjoint_convolve(ratio, h)
        # FFT round-off can dip a hair below zero
        np.maximum(x, 0.0, out=x)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"richardson_lucy: non-finite iterate at iteration {k + 1}")
        if callback is not None:
            callback(k + 1, x)
    return x
