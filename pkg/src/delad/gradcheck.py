"""Finite-difference checks for every autodiff primitive and the model losses."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .fftconv import normalize_kernel
from .model import TrainConfig, build_forward, init_params, loss_terms, param_leaves

LINEAR_TOL = 1e-10
NONLINEAR_TOL = 1e-4
# central differences are exact for linear maps at any step; a wide step
# keeps round-off far below LINEAR_TOL
LINEAR_STEP = 1.0


def _linear_probe(rng, shape):
    """Scalarise a linear op by a fixed random weighting; the result stays linear."""
    r = ad.leaf(rng.normal(size=shape))
    return lambda node: ad.mean(ad.mul(node, r))


def primitive_cases(seed=0, size=8):
    """Yield (name, builder, leaves, tolerance) for each primitive and loss."""
    rng = np.random.default_rng(seed)
    shp = (1, size, size)

    def var(name, shape=shp, scale=1.0, offset=0.0):
        return ad.leaf(offset + scale * rng.normal(size=shape), requires_grad=True, name=name)

    kern = normalize_kernel(rng.random((3, 3)))
    a, b = var("a"), var("b")
    probe = _linear_probe(rng, shp)
    yield "add", lambda: probe(ad.add(a, b)), [a, b], LINEAR_TOL
    yield "sub", lambda: probe(ad.sub(a, b)), [a, b], LINEAR_TOL
    yield "scale", lambda: probe(ad.scale(a, -1.7)), [a], LINEAR_TOL
    yield "conv_h", lambda: probe(ad.conv_h(a, kern)), [a], LINEAR_TOL
    yield "corr_h", lambda: probe(ad.corr_h(a, kern)), [a], LINEAR_TOL
    yield "one_minus", lambda: probe(ad.one_minus(a)), [a], LINEAR_TOL
    yield "mean", lambda: ad.mean(a), [a], LINEAR_TOL
    for axis in ("x", "y"):
        for order in (1, 2):
            yield (f"diff_{axis}{order}", lambda axis=axis, order=order:
                   probe(ad.diff(a, axis, order)), [a], LINEAR_TOL)
    c1, c2 = var("c1"), var("c2", (2, size, size))
    probe3 = _linear_probe(rng, (3, size, size))
    yield "concat", lambda: probe3(ad.concat([c1, c2])), [c1, c2], LINEAR_TOL

    m1, m2 = var("m1"), var("m2")
    yield "mul", lambda: probe(ad.mul(m1, m2)), [m1, m2], NONLINEAR_TOL
    r = var("r")
    yield "relu", lambda: probe(ad.relu(r)), [r], NONLINEAR_TOL
    s = var("s", scale=2.0)
    yield "sigmoid", lambda: probe(ad.sigmoid(s)), [s], NONLINEAR_TOL
    v = var("v")
    yield "abs", lambda: probe(ad.abs_(v)), [v], NONLINEAR_TOL

    x3 = var("x", (3, size, size))
    w = var("w", (2, 3, 3, 3), scale=0.3)
    bias = var("bias", (2,))
    probe2 = _linear_probe(rng, (2, size, size))
    yield "conv3x3", lambda: probe2(ad.conv3x3(x3, w, bias)), [x3, w, bias], NONLINEAR_TOL

    sa = ad.leaf(rng.random(shp), requires_grad=True, name="sa")
    sb = ad.leaf(rng.random(shp), requires_grad=True, name="sb")
    yield "ssim_score", lambda: ad.ssim_score(sa, sb), [sa, sb], NONLINEAR_TOL
    big = (1, 16, 16)
    wa = ad.leaf(rng.random(big), requires_grad=True, name="wa")
    wb = ad.leaf(rng.random(big), requires_grad=True, name="wb")
    yield "ssim_score_windowed", lambda: ad.ssim_score(wa, wb), [wa, wb], NONLINEAR_TOL

    y = rng.random((size, size))
    hk = normalize_kernel(rng.random((3, 3)))
    configs = {
        "loss_hessian": TrainConfig(psi1=1e-6),
        "loss_hessian_strong": TrainConfig(psi1=0.05),
        "loss_sparse": TrainConfig.edof(),
    }
    for name, cfg in configs.items():
        params = init_params((size, size), seed)
        leaves = param_leaves(params)

        def build(leaves=leaves, cfg=cfg):
            out, _ = build_forward(leaves, y, hk, cfg.gamma)
            return loss_terms(out, y, hk, cfg)["loss"]

        yield name, build, list(leaves.values()), NONLINEAR_TOL


def run_checks(seed=0, size=8, step=1e-4):
    """Return ``{case: (max relative error, tolerance)}``.

    ``step`` applies to nonlinear cases; linear ones use LINEAR_STEP.
    """
    results = {}
    for name, builder, leaves, tol in primitive_cases(seed, size):
        h = LINEAR_STEP if tol == LINEAR_TOL else step
        report = ad.grad_check(builder, leaves, step=h, seed=seed)
        results[name] = (max(report.values()), tol)
    return results
