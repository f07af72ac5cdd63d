"""Command-line entry point: ``delad <command> [options]``.

Config files (``--config``) hold one ``key = value`` per line; ``#`` starts a
comment. Values are ints, floats, ``true``/``false`` or comma-separated
integer lists (``lr_milestones = 1000, 1500``). Flags given on the command
line override the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, bench, model, solvers
from .background import estimate_background, remove_background
from .fftconv import load_kernel
from .gradcheck import run_checks
from .imaging import ColorImage, load_image, psnr, save_image, ssim

TRAIN_KEYS = {f.name for f in fields(model.TrainConfig)}
LANDWEBER_KEYS = {f.name for f in fields(solvers.SolverConfig)}
RL_KEYS = {"iterations"}


class ConfigError(ValueError):
    pass


def _parse_value(raw):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in raw:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    raise ValueError(f"cannot parse value {raw!r}")


def read_config(path, allowed):
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in allowed:
                raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
            try:
                out[key] = _parse_value(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for '{key}': {exc}") from None
    return out


def _merge(args, allowed, mapping):
    cfg = read_config(args.config, allowed) if getattr(args, "config", None) else {}
    for attr, key in mapping.items():
        val = getattr(args, attr, None)
        if val is not None:
            cfg[key] = val
    return cfg


_TRAIN_FLAGS = {"epochs": "epochs", "lr": "initial_lr", "gamma": "gamma", "psi1": "psi1",
                "psi2": "psi2", "seed": "seed", "milestones": "lr_milestones",
                "decay": "lr_decay"}


def _train_config(args):
    cfg = _merge(args, TRAIN_KEYS, _TRAIN_FLAGS)
    if args.sparsity:
        cfg["sparsity_enabled"] = True
    if args.edof:
        return model.TrainConfig.edof(**cfg)
    return model.TrainConfig(**cfg)


def _add_train_flags(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--milestones", type=lambda s: tuple(int(v) for v in s.split(",")),
                   help="comma-separated epochs where the lr decays")
    p.add_argument("--decay", type=float, help="lr decay factor")
    p.add_argument("--gamma", type=float, help="Landweber step size")
    p.add_argument("--psi1", type=float, help="Hessian weight")
    p.add_argument("--psi2", type=float, help="sparsity weight")
    p.add_argument("--sparsity", action="store_true", help="enable the sparsity term")
    p.add_argument("--edof", action="store_true", help="start from the microscopy preset")
    p.add_argument("--seed", type=int)


def _report_metrics(xhat, gt_path):
    if not gt_path:
        return {}
    gt = load_image(gt_path)
    if isinstance(gt, ColorImage):
        gt = gt.planes.mean(axis=0)
    return {"psnr": psnr(xhat, gt), "ssim": ssim(np.clip(xhat, 0, 1), gt)}


def cmd_deconv(args):
    cfg = _train_config(args)
    img = load_image(args.input)
    h = load_kernel(args.kernel)
    out = Path(args.output)
    log_path = args.log
    if isinstance(img, ColorImage):
        result, hist = model.deconvolve_color(img, h, cfg, log_path=log_path)
        save_image(result, out)
        metrics = {}
    else:
        gt = None
        if args.ground_truth:
            gt = load_image(args.ground_truth)
        result, hist = model.train(img, h, cfg, ground_truth=gt, log_path=log_path)
        save_image(result, out)
        metrics = _report_metrics(result, args.ground_truth)
    summary = {"input": args.input, "kernel": args.kernel, "output": str(out),
               "config": cfg.to_dict(), "epochs_run": len(hist),
               "final_loss": hist.loss[-1], "final_data": hist.data[-1],
               "history": [hist.record(e) for e in range(len(hist))], **metrics}
    with open(out.with_suffix(".json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    print(f"deconv: {len(hist)} epochs, final loss {hist.loss[-1]:.6f}, wrote {out}")
    for k, v in metrics.items():
        print(f"  {k}: {v:.4f}")
    return 0


def _classic(args, method):
    if method == "landweber":
        cfg = _merge(args, LANDWEBER_KEYS, {"iterations": "iterations", "step_size": "step_size"})
        if args.nonneg:
            cfg["nonneg_projection"] = True
    else:
        cfg = _merge(args, RL_KEYS, {"iterations": "iterations"})
    cfg = bench.method_config(method, cfg)
    img = load_image(args.input)
    if isinstance(img, ColorImage):
        raise ConfigError("classic solvers take grayscale input")
    h = load_kernel(args.kernel)
    xhat = bench.restore(method, img, h, cfg)
    save_image(xhat, args.output)
    metrics = _report_metrics(xhat, args.ground_truth)
    print(f"{method}: {cfg['iterations']} iterations, wrote {args.output}")
    for k, v in metrics.items():
        print(f"  {k}: {v:.4f}")
    return 0


def cmd_bench(args):
    man = bench.load_manifest(args.manifest)
    if args.method == "delad":
        cfg = _train_config(args).to_dict()
    elif args.method == "landweber":
        cfg = _merge(args, LANDWEBER_KEYS, {"iterations": "iterations"})
    else:
        cfg = _merge(args, RL_KEYS, {"iterations": "iterations"})
    report = bench.run_benchmark(man, args.method, cfg, args.output_dir,
                                 seed=args.bench_seed, workers=args.workers)
    agg = report.aggregate()
    print(f"bench {args.method}: {agg['n_cases']} cases, {agg['n_failed']} failed")
    for rec in report.cases:
        if rec["status"] == "ok":
            p = "-" if rec["psnr"] is None else f"{rec['psnr']:.2f} dB"
            s = "-" if rec["ssim"] is None else f"{rec['ssim']:.4f}"
            print(f"  {rec['case']}: PSNR {p}  SSIM {s}  ({rec['wall_time']:.1f}s)")
        else:
            print(f"  {rec['case']}: FAILED {rec['error']}")
    if agg["mean_psnr"] is not None:
        print(f"  mean PSNR {agg['mean_psnr']:.2f} dB, mean SSIM {agg['mean_ssim']:.4f}")
    return 1 if agg["n_failed"] else 0


def cmd_bg_remove(args):
    y = load_image(args.input)
    if isinstance(y, ColorImage):
        raise ConfigError("bg-remove takes grayscale input")
    bg = estimate_background(y, args.iterations, args.levels)
    if args.background:
        save_image(bg, args.background)
    save_image(remove_background(y, args.iterations, args.levels), args.output)
    print(f"bg-remove: background mean {bg.mean():.4f}, wrote {args.output}")
    return 0


def cmd_synth(args):
    gt = load_image(args.input)
    if isinstance(gt, ColorImage):
        raise ConfigError("synth takes grayscale input")
    y = bench.synth_blur(gt, load_kernel(args.kernel), args.noise, args.seed)
    save_image(y, args.output)
    print(f"synth: PSNR of blurred vs input {psnr(y, gt):.2f} dB, wrote {args.output}")
    return 0


def cmd_gradcheck(args):
    results = run_checks(seed=args.seed, size=args.size)
    ok = True
    for name, (err, tol) in results.items():
        passed = err <= tol and err <= 1e-4
        ok &= passed
        print(f"{name:22s} max rel err {err:.3e}  (tol {tol:.0e})  {'ok' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_info(args):
    d = model.TrainConfig()
    print(f"delad {__version__}")
    print("defaults:", json.dumps(d.to_dict()))
    print("edof preset:", json.dumps(model.TrainConfig.edof().to_dict()))
    if args.shape:
        h, w = args.shape
        n = model.param_count(model.init_params((h, w), 0))
        print(f"parameters for {h}x{w}: {n} (= 4*{h}*{w} + 58)")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="delad", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("deconv", help="self-supervised unrolled Landweber deconvolution")
    d.add_argument("--input", required=True)
    d.add_argument("--kernel", required=True)
    d.add_argument("--output", required=True)
    d.add_argument("--ground-truth", help="reference image, used only for reported metrics")
    d.add_argument("--log", help="per-epoch JSON-lines log path")
    _add_train_flags(d)
    d.set_defaults(func=cmd_deconv)

    for name in ("landweber", "rl"):
        c = sub.add_parser(name, help=f"{name} baseline")
        c.add_argument("--input", required=True)
        c.add_argument("--kernel", required=True)
        c.add_argument("--output", required=True)
        c.add_argument("--ground-truth")
        c.add_argument("--config")
        c.add_argument("--iterations", type=int)
        if name == "landweber":
            c.add_argument("--step-size", type=float)
            c.add_argument("--nonneg", action="store_true")
        c.set_defaults(func=lambda a, m=name: _classic(a, m))

    b = sub.add_parser("bench", help="run a method over a dataset manifest")
    b.add_argument("--manifest", required=True)
    b.add_argument("--method", required=True, choices=bench.METHODS)
    b.add_argument("--output-dir", default="bench_out")
    b.add_argument("--bench-seed", type=int, default=0, help="seed for blur synthesis")
    b.add_argument("--workers", type=int, help=f"parallel cases (default ${bench.WORKERS_ENV} or 1)")
    b.add_argument("--iterations", type=int, help="iterations for landweber/rl")
    _add_train_flags(b)
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("bg-remove", help="wavelet background removal")
    g.add_argument("--input", required=True)
    g.add_argument("--output", required=True)
    g.add_argument("--background", help="also save the estimated background")
    g.add_argument("--iterations", type=int, default=3)
    g.add_argument("--levels", type=int, default=7)
    g.set_defaults(func=cmd_bg_remove)

    s = sub.add_parser("synth", help="blur a sharp image and add noise")
    s.add_argument("--input", required=True)
    s.add_argument("--kernel", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--noise", type=float, default=bench.DEFAULT_NOISE)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--size", type=int, default=8)
    c.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("info", help="version, defaults and parameter counts")
    i.add_argument("--shape", type=int, nargs=2, metavar=("H", "W"))
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, bench.ManifestError, ValueError, TypeError, OSError) as exc:
        print(f"delad {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
