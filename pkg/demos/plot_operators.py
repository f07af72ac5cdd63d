"""
Blur, its adjoint, and the classic solvers
==========================================

Blur a picture with a motion kernel, then undo it with Landweber and
Richardson-Lucy. Both run on the same FFT operator pair.
"""
import numpy as np
from skimage import data

from delad import bench, imaging, solvers
from delad.fftconv import adjoint_convolve, convolve

x = data.camera()[100:355, 150:405] / 255.0
h = bench.motion_kernel(19, seed=0)

# the adjoint really is the transpose: <Hx, y> == <x, H^T y>
rng = np.random.default_rng(0)
u, v = rng.normal(size=x.shape), rng.normal(size=x.shape)
print("adjoint gap:", abs(np.vdot(convolve(u, h), v) - np.vdot(u, adjoint_convolve(v, h))))

# noiseless blur first; both solvers recover a lot
y = convolve(x, h)
lw = solvers.landweber(y, h, solvers.SolverConfig(iterations=1000))
rl = solvers.richardson_lucy(y, h, 1000)
print(f"clean   blurred {imaging.psnr(y, x):.2f} dB  landweber {imaging.psnr(lw, x):.2f} dB  "
      f"rl {imaging.psnr(rl, x):.2f} dB")

# with 1% noise, 1000 plain iterations amplify the noise past the blurred input
y = bench.synth_blur(x, h, 0.01, seed=1)
lw = solvers.landweber(y, h, solvers.SolverConfig(iterations=1000))
rl = solvers.richardson_lucy(y, h, 1000)
print(f"1% noise blurred {imaging.psnr(y, x):.2f} dB  landweber {imaging.psnr(lw, x):.2f} dB  "
      f"rl {imaging.psnr(rl, x):.2f} dB")

# stopping early is the classic regulariser
track = []
solvers.landweber(y, h, solvers.SolverConfig(iterations=300),
                  callback=lambda k, est: track.append(imaging.psnr(est, x)))
best = int(np.argmax(track))
print(f"best landweber iterate: {best + 1} at {track[best]:.2f} dB")

try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    fig, ax = plt.subplots(1, 4, figsize=(12, 3.2))
    for a, img, title in zip(ax, [x, y, lw, h], ["sharp", "blurred + 1%", "landweber", "kernel"]):
        a.imshow(img, cmap="gray")
        a.set_title(title)
        a.axis("off")
    fig.tight_layout()
    fig.savefig("operators.png", dpi=100)
