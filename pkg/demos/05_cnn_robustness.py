"""Train small CNNs, deform a corpus, and compare robustness and activations.

Uses a synthetic corpus in the CIFAR-10 binary layout, so it runs anywhere;
point ``cifar_dir`` at the real binaries to use CIFAR-10 instead.
"""

# %%
from pathlib import Path

from powconv.cli import main as powconv
from powconv.cnn import train_cnn, write_synthetic_cifar
from powconv.config import ExperimentConfig, default_config
from powconv.diagnostics import run_stats
from powconv.robustness import deform_corpus, evaluate_robustness

work = Path("demo_out/cnn")
data = write_synthetic_cifar(work / "data", per_file=200, n_test=300, seed=1, noise=2.0)

# %% [markdown]
# The same three-block network, with plain and in-channel powered convolutions.

# %%
checkpoints = {}
for variant in ("base", "in1"):
    cfg = default_config("CnnTrain").with_overrides(
        variant=variant, epochs=4, out=work / "train",
        data={"cifar_dir": str(data), "n_train": "1000", "n_test": "300", "widths": "8,16,32"})
    result = train_cnn(cfg)
    checkpoints[variant] = result.checkpoint
    print(variant, "test accuracy per epoch:", [round(a, 1) for a in result.history.test_acc])

# %% [markdown]
# Write a small corpus of images, one directory per class, then deform it.

# %%
powconv(["gen-data", "--out", str(work / "corpus"), "--seed", "1",
         "--set", "kind=corpus", "--set", "n_images=60"])
manifest, entries = deform_corpus(ExperimentConfig(
    "Deform", seed=2, out=work / "deformed",
    data={"images": str(work / "corpus"), "kinds": "Blur,SaltPepper,StructuredNoise,PatchOcclude"}))
print(len(entries), "deformed images; manifest at", manifest)

# %% [markdown]
# Errors on images that both models get right before deformation.

# %%
rows, kept = evaluate_robustness(checkpoints, manifest)
print(kept, "images kept by the correctness filter")
for r in rows:
    print(f"{r['deformation']:16s} base top-1 {r['base.top1']:6.2f}%   in1 top-1 {r['in1.top1']:6.2f}%")

# %% [markdown]
# How far salt-and-pepper noise moves each layer's activation distribution.

# %%
stats = run_stats(ExperimentConfig("Stats", out=work / "stats",
                                   data={"checkpoint": str(checkpoints["in1"]),
                                         "images": str(work / "corpus")}))
for r in stats:
    print(f"{r['layer']:20s} JSD {r['jsd_ab']:.4f}  skew {r['skew_a']:+.2f} -> {r['skew_b']:+.2f}")
