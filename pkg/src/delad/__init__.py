"""Self-supervised non-blind deconvolution with an unrolled Landweber network.

Submodules: ``imaging`` (I/O, colour, PSNR/SSIM), ``fftconv`` (blur operator),
``solvers`` (Landweber, Richardson-Lucy), ``autodiff`` (reverse-mode engine),
``model`` (the unrolled network and its training), ``optim`` (RMSprop),
``background`` (wavelet background removal) and ``bench`` (benchmarks).
"""

__version__ = "0.1.0"

from .background import dwt2, estimate_background, idwt2, remove_background
from .fftconv import adjoint_convolve, convolve, load_kernel, normalize_kernel
from .imaging import ColorImage, convert_color, load_image, psnr, save_image, ssim
from .model import TrainConfig, deconvolve_color, forward, init_params, train
from .solvers import SolverConfig, landweber, richardson_lucy

__all__ = [
    "ColorImage", "SolverConfig", "TrainConfig", "adjoint_convolve", "convert_color",
    "convolve", "deconvolve_color", "dwt2", "estimate_background", "forward", "idwt2",
    "init_params", "landweber", "load_image", "load_kernel", "normalize_kernel", "psnr",
    "remove_background", "richardson_lucy", "save_image", "ssim", "train",
]
