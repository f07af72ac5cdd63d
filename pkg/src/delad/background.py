"""Wavelet background estimation for microscopy images.

The transform is an orthonormal, periodised, separable 2D DWT with the
Daubechies-6 (12-tap) filter pair. Each level is a pair of dense analysis
matrices, so the inverse is simply the transpose.
"""
from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass

import numpy as np

from .imaging import as_image

# Daubechies-6 scaling filter (6 vanishing moments), orthonormal normalisation
DB6_LO = np.array([
    0.11154074335010947, 0.49462389039845306, 0.7511339080210954,
    0.31525035170919763, -0.22626469396543983, -0.12976686756726194,
    0.09750160558732304, 0.027522865530305727, -0.03158203931748603,
    0.0005538422011614961, 0.004777257510945511, -0.0010773010853084796,
])
DB6_HI = (-1.0) ** np.arange(12) * DB6_LO[::-1]

DEFAULT_LEVELS = 7


class WaveletError(ValueError):
    pass


@functools.lru_cache(maxsize=64)
def analysis_matrices(n):
    """(lo, hi), each (n/2, n): a[k] = sum_j f[j] x[(2k + j) mod n]."""
    if n % 2:
        raise WaveletError(f"periodic DWT needs an even length, got {n}")
    lo = np.zeros((n // 2, n))
    hi = np.zeros((n // 2, n))
    for k in range(n // 2):
        for j in range(len(DB6_LO)):
            lo[k, (2 * k + j) % n] += DB6_LO[j]
            hi[k, (2 * k + j) % n] += DB6_HI[j]
    lo.setflags(write=False)
    hi.setflags(write=False)
    return lo, hi


@dataclass
class WaveletPyramid:
    """Multilevel decomposition; ``details[0]`` is the finest level.

    Each detail entry is (horizontal, vertical, diagonal). ``pad`` records
    the symmetric padding applied to reach a multiple of 2**levels, and
    ``shape`` the original image shape.
    """

    approx: np.ndarray
    details: list
    shape: tuple
    pad: tuple = ((0, 0), (0, 0))
    wavelet: str = "db6"

    @property
    def levels(self):
        return len(self.details)

    def coefficients(self):
        yield self.approx
        for band in self.details:
            yield from band

    def approximation_only(self):
        details = [tuple(np.zeros_like(b) for b in band) for band in self.details]
        return WaveletPyramid(self.approx.copy(), details, self.shape, self.pad, self.wavelet)


def max_levels(shape):
    return int(np.floor(np.log2(min(shape))))


def dwt2(x, levels=DEFAULT_LEVELS) -> WaveletPyramid:
    x = as_image(x)
    if levels < 1:
        raise WaveletError("levels must be >= 1")
    if levels > max_levels(x.shape):
        raise WaveletError(f"{levels} levels too many for shape {x.shape} "
                           f"(max {max_levels(x.shape)})")
    block = 2 ** levels
    pad = tuple(((-n % block) // 2, (-n % block) - (-n % block) // 2) for n in x.shape)
    a = np.pad(x, pad, mode="symmetric") if any(sum(p) for p in pad) else x
    details = []
    for _ in range(levels):
        rlo, rhi = analysis_matrices(a.shape[0])
        clo, chi = analysis_matrices(a.shape[1])
        low_rows, high_rows = rlo @ a, rhi @ a
        details.append((high_rows @ clo.T, low_rows @ chi.T, high_rows @ chi.T))
        a = low_rows @ clo.T
    return WaveletPyramid(a, details, x.shape, pad)


def idwt2(p: WaveletPyramid) -> np.ndarray:
    a = p.approx
    for hband, vband, dband in reversed(p.details):
        if not (a.shape == hband.shape == vband.shape == dband.shape):
            raise WaveletError("inconsistent band shapes in pyramid")
        rlo, rhi = analysis_matrices(2 * a.shape[0])
        clo, chi = analysis_matrices(2 * a.shape[1])
        a = rlo.T @ (a @ clo + vband @ chi) + rhi.T @ (hband @ clo + dband @ chi)
    (t, _), (l, _) = p.pad
    h, w = p.shape
    if a.shape[0] < t + h or a.shape[1] < l + w:
        raise WaveletError("pyramid does not cover its recorded image shape")
    return a[t:t + h, l:l + w].copy()


def lowpass(x, levels=DEFAULT_LEVELS):
    """Reconstruction from the coarsest approximation band alone."""
    return idwt2(dwt2(x, levels).approximation_only())


def estimate_background(y, iterations=3, levels=DEFAULT_LEVELS):
    """Iterative low-frequency background estimate.

    Each pass clips the current estimate to its mean, keeps only the
    level-``levels`` approximation band, and takes the pixelwise minimum
    with sqrt(y)/2. The result seeds the next pass.
    """
    y = as_image(y)
    feasible = max_levels(y.shape)
    if levels > feasible:
        warnings.warn(f"image {y.shape} too small for {levels} levels; using {feasible}",
                      stacklevel=2)
        levels = feasible
    if levels < 1:
        raise WaveletError(f"image {y.shape} too small for a wavelet decomposition")
    ceiling = np.sqrt(np.maximum(y, 0.0)) / 2
    est = y
    for _ in range(iterations):
        clipped = np.minimum(est, est.mean())
        est = np.clip(lowpass(clipped, levels), 0.0, ceiling)
    return est


def remove_background(y, iterations=3, levels=DEFAULT_LEVELS):
    y = as_image(y)
    return np.clip(y - estimate_background(y, iterations, levels), 0.0, 1.0)
