"""Image containers, file I/O, colour conversion and quality metrics.

Grayscale images are plain 2D float64 arrays with nominal range [0, 1].
Colour images are wrapped in :class:`ColorImage`, which stores three planes
and the colour space they are expressed in.
"""
from __future__ import annotations

import functools
import os
from dataclasses import dataclass

import cv2
import numpy as np

PSNR_CAP = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# BT.601 full range, chroma centred on 0.5
_RGB2YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.299 / 1.772, -0.587 / 1.772, 0.5],
    [0.5, -0.587 / 1.402, -0.114 / 1.402],
])
_YCC2RGB = np.linalg.inv(_RGB2YCC)
_CHROMA_OFFSET = np.array([0.0, 0.5, 0.5])

_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm"}


class ImageError(ValueError):
    pass


@dataclass(frozen=True)
class ColorImage:
    planes: np.ndarray  # (3, H, W)
    space: str = "RGB"

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float64)
        if planes.ndim != 3 or planes.shape[0] != 3:
            raise ImageError(f"colour image needs 3 planes, got shape {planes.shape}")
        if self.space not in ("RGB", "YCbCr"):
            raise ImageError(f"unknown colour space {self.space!r}")
        object.__setattr__(self, "planes", planes)

    @property
    def shape(self):
        return self.planes.shape[1:]


def as_image(x) -> np.ndarray:
    """Validate and return a finite, non-empty 2D float64 array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ImageError(f"expected a 2D image, got {x.ndim} dimensions")
    if x.size == 0:
        raise ImageError("image has zero size")
    if not np.all(np.isfinite(x)):
        raise ImageError("image contains non-finite values")
    return x


def load_image(path):
    """Read a PNG or binary PGM/PPM file and map intensities to [0, 1].

    Grayscale files give a 2D array, colour files a :class:`ColorImage` in RGB.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ImageError(f"cannot read {path}: no such file")
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageError(f"cannot decode {path}")
    if raw.size == 0:
        raise ImageError(f"{path} is zero-sized")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageError(f"unsupported bit depth {raw.dtype} in {path}")
    data = raw.astype(np.float64) / scale
    if data.ndim == 2:
        return data
    if data.shape[2] == 4:
        data = data[..., :3]
    if data.shape[2] != 3:
        raise ImageError(f"unsupported channel count {data.shape[2]} in {path}")
    # cv2 stores BGR
    return ColorImage(np.ascontiguousarray(data[..., ::-1].transpose(2, 0, 1)), "RGB")


def save_image(image, path, bits=16):
    """Write an image, clamping to [0, 1] before quantisation.

    PGM/PPM and PNG are chosen by suffix. YCbCr inputs are converted to RGB.
    """
    path = os.fspath(path)
    suffix = os.path.splitext(path)[1].lower()
    if suffix not in _SUFFIXES:
        raise ImageError(f"unsupported output format {suffix!r}")
    if bits not in (8, 16):
        raise ImageError("bits must be 8 or 16")
    if isinstance(image, ColorImage):
        if image.space != "RGB":
            image = convert_color(image, "RGB")
        data = image.planes.transpose(1, 2, 0)[..., ::-1]
        if suffix == ".pgm":
            raise ImageError("PGM cannot hold a colour image; use .ppm or .png")
    else:
        data = as_image(image)
        if suffix == ".ppm":
            data = np.repeat(data[..., None], 3, axis=2)
    peak, dtype = (65535, np.uint16) if bits == 16 else (255, np.uint8)
    q = np.rint(np.clip(data, 0.0, 1.0) * peak).astype(dtype)
    if not cv2.imwrite(path, np.ascontiguousarray(q)):
        raise ImageError(f"cannot write {path}")


def convert_color(img: ColorImage, target: str) -> ColorImage:
    if target not in ("RGB", "YCbCr"):
        raise ImageError(f"unknown colour space {target!r}")
    if img.space == target:
        raise ImageError(f"image is already in {target}")
    flat = img.planes.reshape(3, -1)
    if target == "YCbCr":
        out = _RGB2YCC @ flat + _CHROMA_OFFSET[:, None]
    else:
        out = _YCC2RGB @ (flat - _CHROMA_OFFSET[:, None])
    return ColorImage(out.reshape(img.planes.shape), target)


def _check_pair(a, b):
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ImageError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio for unit peak; identical images give PSNR_CAP."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / mse)))


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-(t ** 2) / (2 * sigma ** 2))
    return g / g.sum()


@functools.lru_cache(maxsize=32)
def _window_matrix(n):
    """Dense 1D Gaussian smoothing matrix with half-sample symmetric edges."""
    g = gaussian_window()
    r = len(g) // 2
    m = np.zeros((n, n))
    for i in range(n):
        for t, w in zip(range(-r, r + 1), g):
            j = i + t
            if j < 0:
                j = -j - 1
            elif j >= n:
                j = 2 * n - j - 1
            m[i, j] += w
    m.setflags(write=False)
    return m


class _LocalMean:
    """Pixel-centred local averaging F and its transpose.

    Images smaller than the window fall back to one global window.
    """

    def __init__(self, shape):
        h, w = shape
        self.global_window = min(h, w) < SSIM_WINDOW
        if not self.global_window:
            self.rows = _window_matrix(h)
            self.cols = _window_matrix(w)

    def __call__(self, x):
        if self.global_window:
            return np.full(x.shape, x.mean())
        return self.rows @ x @ self.cols.T

    def T(self, g):
        if self.global_window:
            return np.full(g.shape, g.sum() / g.size)
        return self.rows.T @ g @ self.cols


def ssim_terms(x, y):
    """Forward SSIM map plus a vector-Jacobian closure.

    Returns ``(smap, vjp)`` where ``vjp(g)`` maps an upstream gradient on the
    map to gradients on ``x`` and ``y``.
    """
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    f = _LocalMean(x.shape)
    mx, my = f(x), f(y)
    exx, eyy, exy = f(x * x), f(y * y), f(x * y)
    mxy = mx * my
    a1 = 2 * mxy + c1
    a2 = 2 * (exy - mxy) + c2
    b1 = mx * mx + my * my + c1
    b2 = (exx - mx * mx) + (eyy - my * my) + c2
    den = b1 * b2
    smap = a1 * a2 / den

    def vjp(g):
        d_a1 = g * a2 / den
        d_a2 = g * a1 / den
        d_b1 = -g * smap / b1
        d_b2 = -g * smap / b2
        d_mx = 2 * my * (d_a1 - d_a2) + 2 * mx * (d_b1 - d_b2)
        d_my = 2 * mx * (d_a1 - d_a2) + 2 * my * (d_b1 - d_b2)
        t_exy = f.T(2 * d_a2)
        t_sq = f.T(d_b2)
        gx = f.T(d_mx) + 2 * x * t_sq + y * t_exy
        gy = f.T(d_my) + 2 * y * t_sq + x * t_exy
        return gx, gy

    return smap, vjp


def ssim(a, b) -> float:
    """Mean structural similarity, 11x11 Gaussian window (sigma 1.5), unit range."""
    a, b = _check_pair(a, b)
    smap, _ = ssim_terms(a, b)
    return float(np.mean(smap))
