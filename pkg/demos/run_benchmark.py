"""
A tiny benchmark from a manifest
================================

Write a manifest with two kernels over one picture, run the three methods
and read back the report. The same thing is available as
``delad bench --manifest m.json --method rl``.
"""
import json
import sys
import tempfile
from pathlib import Path

from skimage import data

from delad import bench, imaging
from delad.fftconv import save_kernel

root = Path(tempfile.mkdtemp(prefix="delad_bench_"))
imaging.save_image(data.camera()[150:278, 200:328] / 255.0, root / "camera.png")
cases = []
for s in (0, 1):
    save_kernel(bench.motion_kernel(15, seed=s), root / f"k{s}.txt")
    cases.append({"name": f"camera_k{s}", "ground_truth": "camera.png",
                  "kernel": f"k{s}.txt", "noise_sigma": 0.005})
(root / "manifest.json").write_text(json.dumps({"version": 1, "cases": cases}, indent=1))
manifest = bench.load_manifest(root / "manifest.json")

# short settings so the script finishes in well under a minute;
# pass --full for the default iteration counts and 2000 epochs
full = "--full" in sys.argv
settings = {
    "landweber": {} if full else {"iterations": 100},
    "rl": {} if full else {"iterations": 100},
    "delad": {} if full else {"epochs": 300, "lr_milestones": [150, 225]},
}
for method, cfg in settings.items():
    report = bench.run_benchmark(manifest, method, cfg, root / method, seed=0)
    agg = report.aggregate()
    print(f"{method:10s} mean PSNR {agg['mean_psnr']:.2f} dB  mean SSIM {agg['mean_ssim']:.3f}")

print("reports under", root)
print(json.dumps(json.loads((root / "rl" / "report.json").read_text())["aggregate"], indent=1))
