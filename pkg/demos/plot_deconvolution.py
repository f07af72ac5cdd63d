"""
Self-supervised deconvolution with the unrolled Landweber model
===============================================================

The model sees only the blurred image and the kernel. The sharp image is
handed to ``train`` purely so the history can track PSNR and SSIM.
"""
import numpy as np
from skimage import data

from delad import bench, imaging, model

x = data.camera()[150:278, 200:328] / 255.0
h = bench.motion_kernel(19, seed=0)
y = bench.synth_blur(x, h, noise_sigma=0.0)

params = model.init_params(y.shape, seed=0)
print("parameters:", model.param_count(params))

# a short run; the full schedule is TrainConfig() with 2000 epochs
cfg = model.TrainConfig(epochs=400, lr_milestones=(200, 300))
xhat, hist = model.train(y, h, cfg, ground_truth=x)

for e in range(0, cfg.epochs, 50):
    print(f"epoch {e:4d}  lr {hist.lr[e]:.4f}  loss {hist.loss[e]:+.5f}  "
          f"psnr {hist.psnr[e]:.2f}  ssim {hist.ssim[e]:.3f}")
print(f"blurred {imaging.psnr(y, x):.2f} dB -> restored {imaging.psnr(xhat, x):.2f} dB")

# the intermediate estimates x1..x3 feed the fusion layer
_, stages = model.forward(model.init_params(y.shape, 0), y, h)
print("stage means at init:", [round(float(s.mean()), 3) for s in stages])

try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    fig, ax = plt.subplots(1, 4, figsize=(12, 3.2))
    for a, img, title in zip(ax[:3], [x, y, xhat], ["sharp", "blurred", "restored"]):
        a.imshow(img, cmap="gray", vmin=0, vmax=1)
        a.set_title(title)
        a.axis("off")
    ax[3].plot(hist.psnr)
    ax[3].set_xlabel("epoch")
    ax[3].set_ylabel("PSNR (dB)")
    fig.tight_layout()
    fig.savefig("deconvolution.png", dpi=100)
