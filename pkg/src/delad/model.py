"""Unrolled Landweber network (three learnable iterations plus a fusion layer).

The model is fitted per image: the only inputs to training are the blurred
image and its PSF. A ground-truth image, when given, is used for logging only.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .fftconv import as_kernel
from .imaging import ColorImage, as_image, convert_color, psnr, ssim
from .optim import RMSprop, LrSchedule, lr_at_epoch

log = logging.getLogger(__name__)

N_ITER = 3
GRID_NAMES = ("x0", "m1", "m2", "m3")
CONV_NAMES = ("c1", "c2", "c3")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    initial_lr: float = 0.05
    lr_milestones: tuple = (1000, 1500)
    lr_decay: float = 0.2
    gamma: float = 0.8
    psi1: float = 1e-6
    psi2: float = 0.0
    sparsity_enabled: bool = False
    seed: int = 0
    rho: float = 0.99
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.gamma < 2:
            raise ValueError("gamma must lie in (0, 2)")
        if self.psi1 < 0 or self.psi2 < 0:
            raise ValueError("regulariser weights must be >= 0")
        object.__setattr__(self, "lr_milestones", tuple(int(m) for m in self.lr_milestones))
        self.schedule  # validates milestones and decay

    @property
    def schedule(self):
        return LrSchedule(self.initial_lr, self.lr_milestones, self.lr_decay)

    @classmethod
    def edof(cls, **overrides):
        """Preset for sparse microscopy images on light backgrounds."""
        base = dict(epochs=1000, initial_lr=5e-3, lr_milestones=(700,), lr_decay=0.2,
                    psi1=3e-6, psi2=0.2, sparsity_enabled=True)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        d = asdict(self)
        d["lr_milestones"] = list(self.lr_milestones)
        return d


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    data: list = field(default_factory=list)
    hessian: list = field(default_factory=list)
    sparsity: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def record(self, epoch):
        rec = {"epoch": epoch, "lr": self.lr[epoch], "loss": self.loss[epoch],
               "data": self.data[epoch], "hessian": self.hessian[epoch],
               "sparsity": self.sparsity[epoch]}
        if self.psnr:
            rec["psnr"] = self.psnr[epoch]
            rec["ssim"] = self.ssim[epoch]
        return rec


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch, snapshot, history):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch
        self.snapshot = snapshot
        self.history = history


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def init_params(shape, seed=0) -> dict:
    """Draw a fresh parameter set with NumPy's PCG64 generator.

    Image-sized grids are uniform on [0, 1). Conv weights are uniform on
    [-1/sqrt(fan_in), 1/sqrt(fan_in)] with zero biases.
    """
    h, w = shape
    if h < 1 or w < 1:
        raise ValueError(f"zero-sized shape {shape}")
    rng = np.random.default_rng(seed)
    params = {name: rng.random((1, h, w)) for name in GRID_NAMES}
    for name, cin in [*((c, 1) for c in CONV_NAMES), ("fuse", N_ITER)]:
        bound = math.sqrt(1.0 / (9 * cin))
        params[f"{name}_w"] = rng.uniform(-bound, bound, size=(1, cin, 3, 3))
        params[f"{name}_b"] = np.zeros(1)
    return params


def param_count(params) -> int:
    return sum(p.size for p in params.values())


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------

def param_leaves(params, requires_grad=True):
    return {k: ad.Node(v, requires_grad=requires_grad, name=k) for k, v in params.items()}


def build_forward(leaves, y, h, gamma):
    """Returns (xhat, [x1, x2, x3]) nodes."""
    yl = y if isinstance(y, ad.Node) else ad.leaf(y)
    x = leaves["x0"]
    stages = []
    for k in range(N_ITER):
        resid = yl - ad.conv_h(x, h)
        w = x + gamma * ad.corr_h(resid, h) + leaves[f"m{k + 1}"]
        c = CONV_NAMES[k]
        x = ad.sigmoid(ad.conv3x3(ad.relu(w), leaves[f"{c}_w"], leaves[f"{c}_b"]))
        stages.append(x)
    fused = ad.conv3x3(ad.concat(stages), leaves["fuse_w"], leaves["fuse_b"])
    return ad.sigmoid(fused), stages


def hessian_node(x):
    """mean(|Xxx| + |Xyy| + 2|Xxy|) on replicated edges."""
    xx = ad.abs_(ad.diff(x, "x", 2))
    yy = ad.abs_(ad.diff(x, "y", 2))
    xy = ad.abs_(ad.diff(ad.diff(x, "x", 1), "y", 1))
    return ad.mean(xx + yy + 2.0 * xy)


def sparsity_node(x):
    return ad.mean(ad.abs_(ad.one_minus(x)))


def loss_terms(xhat, y, h, cfg: TrainConfig):
    """Scalar nodes {'loss', 'data', 'hessian', 'sparsity'?} for a model output."""
    yl = y if isinstance(y, ad.Node) else ad.leaf(y)
    data = -ad.ssim_score(ad.conv_h(xhat, h), yl)
    hess = hessian_node(xhat)
    total = data + cfg.psi1 * hess
    terms = {"data": data, "hessian": hess}
    if cfg.sparsity_enabled:
        sp = sparsity_node(xhat)
        total = total + cfg.psi2 * sp
        terms["sparsity"] = sp
    terms["loss"] = total
    return terms


def loss(xhat, y, h, cfg: TrainConfig):
    """Scalar loss node: -SSIM(H xhat, y) + psi1 R(xhat) [+ psi2 |1 - xhat|]."""
    if not isinstance(xhat, ad.Node):
        xhat = ad.leaf(as_image(xhat))
    return loss_terms(xhat, y, h, cfg)["loss"]


# ---------------------------------------------------------------------------
# array-level API
# ---------------------------------------------------------------------------

def forward(params, y, h, gamma=0.8):
    """Run the model; returns (xhat, [x1, x2, x3]) as 2D arrays."""
    y, h = as_image(y), as_kernel(h)
    if params["x0"].shape[1:] != y.shape:
        raise ValueError(f"parameters are for {params['x0'].shape[1:]}, image is {y.shape}")
    try:
        xhat, stages = build_forward(param_leaves(params, False), y, h, gamma)
    except FloatingPointError as exc:
        raise FloatingPointError(f"forward: {exc}") from None
    return xhat.value[0].copy(), [s.value[0].copy() for s in stages]


def hessian_reg(x) -> float:
    return hessian_node(ad.leaf(as_image(x))).value.item()


def sparsity_term(x) -> float:
    return sparsity_node(ad.leaf(as_image(x))).value.item()


def train(y, h, cfg: TrainConfig = TrainConfig(), ground_truth=None, log_path=None,
          callback=None):
    """Fit the model to one blurred image; returns (xhat, TrainHistory).

    Every epoch runs forward, loss, backward and one RMSprop step. The result
    is the model output of the final epoch. ``ground_truth`` only feeds the
    PSNR/SSIM columns of the history.
    """
    y, h = as_image(y), as_kernel(h)
    if ground_truth is not None:
        ground_truth = as_image(ground_truth)
    params = init_params(y.shape, cfg.seed)
    opt = RMSprop(params, rho=cfg.rho, eps=cfg.eps)
    sched = cfg.schedule
    hist = TrainHistory()
    yl = ad.leaf(y)
    xhat = None
    fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            lr = lr_at_epoch(sched, epoch)
            try:
                leaves = param_leaves(params)
                out, _ = build_forward(leaves, yl, h, cfg.gamma)
                terms = loss_terms(out, yl, h, cfg)
                ad.backward(terms["loss"])
                opt.step({k: n.grad for k, n in leaves.items()}, lr)
            except FloatingPointError:
                raise TrainingDiverged(epoch, xhat, hist) from None
            xhat = out.value[0].copy()
            hist.lr.append(lr)
            hist.loss.append(terms["loss"].value.item())
            hist.data.append(terms["data"].value.item())
            hist.hessian.append(terms["hessian"].value.item())
            hist.sparsity.append(terms["sparsity"].value.item() if "sparsity" in terms else 0.0)
            if ground_truth is not None:
                hist.psnr.append(psnr(xhat, ground_truth))
                hist.ssim.append(ssim(xhat, ground_truth))
            if fh is not None:
                fh.write(json.dumps(hist.record(epoch)) + "\n")
            if callback is not None:
                callback(epoch, xhat, hist)
            if epoch % 500 == 0 or epoch == cfg.epochs - 1:
                log.debug("epoch %d loss %.6f lr %.4g", epoch, hist.loss[-1], lr)
    finally:
        if fh is not None:
            fh.close()
    return xhat, hist


def deconvolve_color(img: ColorImage, h, cfg: TrainConfig = TrainConfig(), **kwargs):
    """Deconvolve the luma plane only; chroma planes pass through untouched.

    Returns (ColorImage in RGB, TrainHistory). Extra keyword arguments go to
    :func:`train`.
    """
    if img.space != "RGB":
        raise ValueError("deconvolve_color expects an RGB image")
    ycc = convert_color(img, "YCbCr")
    y_hat, hist = train(ycc.planes[0], h, cfg, **kwargs)
    planes = ycc.planes.copy()
    planes[0] = y_hat
    return convert_color(ColorImage(planes, "YCbCr"), "RGB"), hist
