"""Circular convolution with a PSF, and its adjoint, via the FFT.

The kernel centre ``(kh // 2, kw // 2)`` is aligned with pixel (0, 0), so a
delta kernel is the identity. Kernels always have odd dimensions.
"""
from __future__ import annotations

import os
import threading

import numpy as np
import scipy.fft as sfft

from .imaging import ColorImage, ImageError, as_image, load_image


class KernelError(ValueError):
    pass


def normalize_kernel(k) -> np.ndarray:
    """Return a unit-sum copy of ``k`` with odd dimensions.

    Even dimensions get one trailing zero row/column, which moves the centre
    half a pixel towards the origin.
    """
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.size == 0:
        raise KernelError(f"kernel must be a non-empty 2D grid, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise KernelError("kernel contains non-finite values")
    if np.any(k < 0):
        raise KernelError("kernel has negative entries")
    total = k.sum()
    if total <= 0:
        raise KernelError("kernel is all zero")
    kh, kw = k.shape
    k = np.pad(k, ((0, 1 - kh % 2), (0, 1 - kw % 2)))
    return k / total


def load_kernel(path) -> np.ndarray:
    """Read a PSF from a grayscale image or a whitespace-delimited text grid."""
    path = os.fspath(path)
    suffix = os.path.splitext(path)[1].lower()
    if suffix in (".png", ".pgm", ".ppm", ".pnm"):
        img = load_image(path)
        if isinstance(img, ColorImage):
            img = img.planes.mean(axis=0)
        return normalize_kernel(img)
    with open(path) as fh:
        rows = [line.split() for line in fh if line.strip()]
    if not rows:
        raise KernelError(f"{path} is empty")
    if len({len(r) for r in rows}) != 1:
        raise KernelError(f"{path}: ragged rows")
    try:
        grid = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise KernelError(f"{path}: {exc}") from None
    return normalize_kernel(grid)


def save_kernel(kernel, path):
    np.savetxt(path, np.asarray(kernel, dtype=np.float64), fmt="%.17g")


def as_kernel(h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] % 2 == 0 or h.shape[1] % 2 == 0:
        raise KernelError(f"kernel must be 2D with odd sides, got {h.shape}")
    return h


def _check(x, h):
    x, h = as_image(x), as_kernel(h)
    if h.shape[0] > x.shape[0] or h.shape[1] > x.shape[1]:
        raise KernelError(f"kernel {h.shape} larger than image {x.shape}")
    return x, h


def psf_to_otf(h, shape) -> np.ndarray:
    """Half-spectrum transfer function of ``h`` zero-padded to ``shape``."""
    kh, kw = h.shape
    pad = np.zeros(shape)
    pad[:kh, :kw] = h
    pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return sfft.rfft2(pad)


class OtfCache:
    """Map of (kernel bytes, image shape) -> OTF. Inserts are first-writer-wins."""

    def __init__(self, maxsize=64):
        self.maxsize = maxsize
        self._data = {}
        self._lock = threading.Lock()

    def get(self, h, shape):
        key = (h.shape, h.tobytes(), tuple(shape))
        otf = self._data.get(key)
        if otf is None:
            otf = psf_to_otf(h, shape)
            otf.setflags(write=False)
            with self._lock:
                if len(self._data) >= self.maxsize:
                    self._data.pop(next(iter(self._data)))
                otf = self._data.setdefault(key, otf)
        return otf

    def clear(self):
        with self._lock:
            self._data.clear()


otf_cache = OtfCache()


def _apply(x, h, conj, cache):
    x, h = _check(x, h)
    otf = otf_cache.get(h, x.shape) if cache else psf_to_otf(h, x.shape)
    if conj:
        otf = np.conj(otf)
    return sfft.irfft2(sfft.rfft2(x) * otf, s=x.shape)


def convolve(x, h, cache=True) -> np.ndarray:
    """Circular convolution ``H x``."""
    return _apply(x, h, False, cache)


def adjoint_convolve(x, h, cache=True) -> np.ndarray:
    """Circular correlation ``H^T x``, the exact adjoint of :func:`convolve`."""
    return _apply(x, h, True, cache)


def operator_norm(h, shape) -> float:
    """Spectral norm of the circular blur operator on images of ``shape``."""
    return float(np.abs(psf_to_otf(np.asarray(h, dtype=np.float64), shape)).max())


__all__ = [
    "ImageError", "KernelError", "OtfCache", "adjoint_convolve", "as_kernel",
    "convolve", "load_kernel", "normalize_kernel", "operator_norm", "otf_cache",
    "psf_to_otf", "save_kernel",
]
