"""Blur synthesis, dataset manifests and benchmark runs.

A manifest is a JSON file::

    {"version": 1,
     "cases": [{"name": "im1_k1",
                "ground_truth": "gt/im1.png",
                "blurred": "blurred/im1_k1.png",
                "kernel": "kernels/k1.txt",
                "noise_sigma": 0.01}]}

Paths are relative to the manifest. Every case needs a kernel and at least
one of ``ground_truth`` / ``blurred``; when ``blurred`` is missing it is
synthesised from the ground truth with circular blur plus Gaussian noise.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import model, solvers
from .fftconv import as_kernel, convolve, load_kernel
from .imaging import ColorImage, as_image, convert_color, load_image, psnr, save_image, ssim

REPORT_VERSION = 1
DEFAULT_NOISE = 0.01
METHODS = ("landweber", "rl", "delad")
WORKERS_ENV = "DELAD_WORKERS"

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["cases"],
    "properties": {
        "version": {"const": 1},
        "cases": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["kernel"],
                "anyOf": [{"required": ["ground_truth"]}, {"required": ["blurred"]}],
                "properties": {
                    "name": {"type": "string"},
                    "ground_truth": {"type": "string"},
                    "blurred": {"type": "string"},
                    "kernel": {"type": "string"},
                    "noise_sigma": {"type": "number", "minimum": 0},
                },
                "additionalProperties": False,
            },
        },
    },
}

_CASE_FIELDS = {
    "case": {"type": "string"},
    "index": {"type": "integer"},
    "method": {"enum": list(METHODS)},
    "status": {"enum": ["ok", "failed"]},
    "psnr": {"type": ["number", "null"]},
    "ssim": {"type": ["number", "null"]},
    "blurred_psnr": {"type": ["number", "null"]},
    "wall_time": {"type": "number"},
    "config_hash": {"type": "string"},
    "seed": {"type": "integer"},
    "output": {"type": ["string", "null"]},
    "error": {"type": ["string", "null"]},
}

CASE_SCHEMA = {
    "type": "object",
    "required": list(_CASE_FIELDS),
    "properties": _CASE_FIELDS,
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["version", "method", "config", "config_hash", "seed", "cases", "aggregate"],
    "properties": {
        "version": {"const": REPORT_VERSION},
        "method": {"enum": list(METHODS)},
        "config": {"type": "object"},
        "config_hash": {"type": "string"},
        "seed": {"type": "integer"},
        "cases": {"type": "array", "items": CASE_SCHEMA},
        "aggregate": {
            "type": "object",
            "required": ["method", "n_cases", "n_failed", "mean_psnr", "mean_ssim"],
            "properties": {
                "method": {"enum": list(METHODS)},
                "n_cases": {"type": "integer"},
                "n_failed": {"type": "integer"},
                "mean_psnr": {"type": ["number", "null"]},
                "mean_ssim": {"type": ["number", "null"]},
            },
        },
    },
}

TIMING_FIELDS = ("wall_time",)


class ManifestError(ValueError):
    pass


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

def synth_blur(gt, h, noise_sigma=DEFAULT_NOISE, seed=0):
    """Circular blur plus seeded Gaussian noise, clamped to [0, 1]."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    blurred = convolve(gt, h)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        blurred = blurred + noise_sigma * rng.standard_normal(blurred.shape)
    return np.clip(blurred, 0.0, 1.0)


def motion_kernel(size=19, seed=0, steps=64):
    """Random-walk camera-shake kernel with bilinear splatting, unit sum.

    Not a model of any particular camera; it gives thin, curved trajectories
    of the kind found in standard motion-blur test sets.
    """
    if size < 5 or size % 2 == 0:
        raise ValueError("size must be odd and >= 5")
    rng = np.random.default_rng(seed)
    pos = np.zeros(2)
    vel = rng.normal(size=2)
    vel /= np.linalg.norm(vel)
    pts = [pos.copy()]
    for _ in range(steps):
        vel = 0.8 * vel + 0.5 * rng.normal(size=2)
        vel /= np.linalg.norm(vel)
        pos = pos + 0.25 * vel
        pts.append(pos.copy())
    pts = np.array(pts)
    pts -= pts.mean(axis=0)
    pts *= (size // 2 - 1) / max(np.abs(pts).max(), 1e-9)
    k = np.zeros((size, size))
    for i, j in pts + size // 2:
        i0, j0 = int(np.floor(i)), int(np.floor(j))
        fi, fj = i - i0, j - j0
        k[i0, j0] += (1 - fi) * (1 - fj)
        k[i0 + 1, j0] += fi * (1 - fj)
        k[i0, j0 + 1] += (1 - fi) * fj
        k[i0 + 1, j0 + 1] += fi * fj
    return k / k.sum()


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class Case:
    name: str
    kernel: str
    ground_truth: str | None = None
    blurred: str | None = None
    noise_sigma: float = DEFAULT_NOISE


@dataclass
class DatasetManifest:
    cases: list
    root: str = "."

    def resolve(self, rel):
        return rel if rel is None else str(Path(self.root) / rel)


def parse_manifest(data, root=".") -> DatasetManifest:
    try:
        jsonschema.validate(data, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ManifestError(f"invalid manifest at {where}: {exc.message}") from None
    cases = []
    for i, c in enumerate(data["cases"]):
        cases.append(Case(name=c.get("name", f"case{i:03d}"), kernel=c["kernel"],
                          ground_truth=c.get("ground_truth"), blurred=c.get("blurred"),
                          noise_sigma=c.get("noise_sigma", DEFAULT_NOISE)))
    names = [c.name for c in cases]
    if len(set(names)) != len(names):
        raise ManifestError("case names must be unique")
    return DatasetManifest(cases, str(root))


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path) as fh:
        data = json.load(fh)
    return parse_manifest(data, path.parent)


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def method_config(method, cfg=None):
    """Normalise a method's configuration to a plain dict with defaults filled."""
    cfg = dict(cfg or {})
    if method == "delad":
        return model.TrainConfig(**cfg).to_dict()
    if method == "landweber":
        return asdict(solvers.SolverConfig(**cfg))
    if method == "rl":
        unknown = set(cfg) - {"iterations"}
        if unknown:
            raise TypeError(f"unknown rl option(s): {sorted(unknown)}")
        return {"iterations": int(cfg.get("iterations", 1000))}
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def config_hash(method, cfg, seed):
    blob = json.dumps({"method": method, "config": cfg, "seed": seed}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def restore(method, blurred, kernel, cfg, ground_truth=None, log_path=None):
    """Run one method on a 2D image."""
    if method == "landweber":
        return solvers.landweber(blurred, kernel, solvers.SolverConfig(**cfg))
    if method == "rl":
        return solvers.richardson_lucy(blurred, kernel, cfg["iterations"])
    tc = model.TrainConfig(**cfg)
    xhat, _ = model.train(blurred, kernel, tc, ground_truth=ground_truth, log_path=log_path)
    return xhat


def _luma(img):
    if isinstance(img, ColorImage):
        return convert_color(img, "YCbCr").planes[0], img
    return as_image(img), None


def _run_case(args):
    index, case, manifest_root, method, cfg, seed, out_dir, chash = args
    man = DatasetManifest([], manifest_root)
    rec = {"case": case.name, "index": index, "method": method, "status": "ok",
           "psnr": None, "ssim": None, "blurred_psnr": None, "wall_time": 0.0,
           "config_hash": chash, "seed": seed, "output": None, "error": None}
    t0 = time.perf_counter()
    try:
        kernel = load_kernel(man.resolve(case.kernel))
        gt = gt_color = None
        if case.ground_truth:
            gt, gt_color = _luma(load_image(man.resolve(case.ground_truth)))
        if case.blurred:
            y, y_color = _luma(load_image(man.resolve(case.blurred)))
        else:
            y = synth_blur(gt, kernel, case.noise_sigma, seed + index)
            y_color = None
            if gt_color is not None:
                planes = convert_color(gt_color, "YCbCr").planes.copy()
                planes[0] = y
                y_color = ColorImage(planes, "YCbCr")
        log_path = None
        if method == "delad":
            log_path = out_dir / "logs" / f"{case.name}.jsonl"
        xhat = restore(method, y, kernel, cfg, ground_truth=gt, log_path=log_path)
        out_path = out_dir / "restored" / f"{case.name}.png"
        if y_color is not None:
            ycc = y_color if y_color.space == "YCbCr" else convert_color(y_color, "YCbCr")
            planes = ycc.planes.copy()
            planes[0] = xhat
            save_image(ColorImage(planes, "YCbCr"), out_path)
        else:
            save_image(xhat, out_path)
        rec["output"] = str(out_path.relative_to(out_dir))
        if gt is not None:
            rec["psnr"] = psnr(xhat, gt)
            rec["ssim"] = ssim(np.clip(xhat, 0, 1), gt)
            rec["blurred_psnr"] = psnr(y, gt)
    except Exception as exc:  # a failed case must not sink the run
        rec["status"] = "failed"
        rec["error"] = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    rec["wall_time"] = time.perf_counter() - t0
    return rec


@dataclass
class BenchReport:
    method: str
    config: dict
    seed: int
    cases: list = field(default_factory=list)

    @property
    def config_hash(self):
        return config_hash(self.method, self.config, self.seed)

    @property
    def n_failed(self):
        return sum(r["status"] != "ok" for r in self.cases)

    def aggregate(self):
        def avg(key):
            vals = [r[key] for r in self.cases if r["status"] == "ok" and r[key] is not None]
            return float(np.mean(vals)) if vals else None
        return {"method": self.method, "n_cases": len(self.cases), "n_failed": self.n_failed,
                "mean_psnr": avg("psnr"), "mean_ssim": avg("ssim")}

    def to_dict(self):
        return {"version": REPORT_VERSION, "method": self.method, "config": self.config,
                "config_hash": self.config_hash, "seed": self.seed, "cases": self.cases,
                "aggregate": self.aggregate()}


def validate_report(data):
    """Raise jsonschema.ValidationError if a report dict is malformed."""
    jsonschema.validate(data, REPORT_SCHEMA)


def strip_timing(record):
    return {k: v for k, v in record.items() if k not in TIMING_FIELDS}


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_benchmark(manifest: DatasetManifest, method, cfg=None, out_dir="bench_out",
                  seed=0, workers=None) -> BenchReport:
    """Run ``method`` over every case and write the report files.

    Files under ``out_dir``: ``restored/<case>.png``, ``cases/<case>.json``,
    ``aggregate.csv``, ``metrics.json`` (plot-ready columns), ``report.json``
    and, for delad, ``logs/<case>.jsonl``.
    """
    cfg = method_config(method, cfg)
    out_dir = Path(out_dir)
    for sub in ("restored", "cases", "logs"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    report = BenchReport(method, cfg, seed)
    chash = report.config_hash
    jobs = [(i, c, manifest.root, method, cfg, seed, out_dir, chash)
            for i, c in enumerate(manifest.cases)]
    workers = workers or default_workers()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_case, jobs))
    else:
        records = [_run_case(j) for j in jobs]
    report.cases = sorted(records, key=lambda r: r["index"])
    write_report(report, out_dir)
    return report


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report(report: BenchReport, out_dir):
    out_dir = Path(out_dir)
    data = report.to_dict()
    validate_report(data)
    for rec in report.cases:
        _dump(rec, out_dir / "cases" / f"{rec['case']}.json")
    _dump(data, out_dir / "report.json")
    agg = data["aggregate"]
    with open(out_dir / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "n_cases", "n_failed", "mean_psnr", "mean_ssim", "config_hash", "seed"])
        w.writerow([agg["method"], agg["n_cases"], agg["n_failed"], agg["mean_psnr"],
                    agg["mean_ssim"], report.config_hash, report.seed])
    metrics = {"method": report.method,
               "case": [r["case"] for r in report.cases],
               "psnr": [r["psnr"] for r in report.cases],
               "ssim": [r["ssim"] for r in report.cases],
               "blurred_psnr": [r["blurred_psnr"] for r in report.cases]}
    _dump(metrics, out_dir / "metrics.json")
