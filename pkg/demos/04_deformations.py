"""Every image deformation, applied to one picture.

Pass an image path as the first argument, or the demo draws a synthetic one.
Results go to demo_out/deform/ as PPM files.
"""

# %%
import sys
from pathlib import Path

import numpy as np

from powconv import deform as D
from powconv.cnn import synthetic_images

if len(sys.argv) > 1:
    img = D.read_image(sys.argv[1])
else:
    x, _ = synthetic_images(2, seed=0, noise=0.05)
    img = np.kron(x[0].transpose(1, 2, 0) / 255.0, np.ones((4, 4, 1)))   # 128x128
out = Path("demo_out/deform")
out.mkdir(parents=True, exist_ok=True)


def psnr(a, b):
    return 10 * np.log10(1 / max(np.mean((a - b) ** 2), 1e-12))


# %% [markdown]
# Defaults for every kind, with a fixed seed.  Donors feed patch occlusion;
# a tiny random network supplies saliency for targeted occlusion.

# %%
from powconv import layers as L
from powconv.network import Sequential

rng = np.random.default_rng(0)
net = Sequential([L.Conv2D(3, 2, 3, 1, 1, rng), L.Flatten(),
                  L.Linear(2 * img.shape[0] * img.shape[1], 3, rng, "lecun")])
donor = img[::-1, ::-1].copy()
for kind in D.KINDS:
    result = D.apply(img, D.DeformSpec(kind, {}, seed=4), donors=[donor], net=net, class_id=0)
    D.write_ppm(out / f"{kind}.ppm", result)
    print(f"{kind:16s} PSNR {psnr(result, img):6.1f} dB  params {D.DEFAULTS[kind]}")

# %% [markdown]
# Chains apply left to right, and the seeds advance by one per step.

# %%
chain = D.parse_chain("Rotation+JpegLike", "Rotation.angle=10,JpegLike.quality=5", seed=7)
D.write_ppm(out / "chain.ppm", D.apply_chain(img, chain))
print([(s.kind, s.params, s.seed) for s in chain])
