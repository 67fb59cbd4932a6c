"""Acceptance criteria 1-8, each printing one PASS/FAIL line.

Criteria 3, 4 and 7 train many networks; the whole module takes roughly
40 minutes on one CPU.  Criterion 7 reads CIFAR-10 from ``$CIFAR10_DIR``
(default ``~/data/cifar-10-batches-bin``); without it that test fails and a
separate line reports the same protocol on a synthetic stand-in corpus.
"""

import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from powconv import deform as D
from powconv import layers as L
from powconv import synthdata as sd
from powconv.cnn import train_cnn, write_synthetic_cifar
from powconv.config import ExperimentConfig, default_config
from powconv.diagnostics import run_stats
from powconv.gradcheck import run_gradcheck, suite
from powconv.tables import run_table1, run_table2
from powconv.tensor import ConvKernel, conv2d, conv2d_backward

CIFAR_DIR = Path(os.environ.get("CIFAR10_DIR", "~/data/cifar-10-batches-bin")).expanduser()


def test_criterion_1_gradient_exactness(verdict):
    report = run_gradcheck(n_instances=100, seed=0)
    counts = {name: report.instances(name) for name, _ in suite()}
    worst = max(report.worst().values())
    ok = report.passed and min(counts.values()) >= 100 and report.seconds < 120
    verdict("1 gradient exactness", ok,
            f"{len(counts)} checks x {min(counts.values())} instances, worst rel err {worst:.2e} "
            f"(tol 1e-5), {len(report.failures)} failures, {report.seconds:.1f}s (< 120s)")


def test_criterion_2_identity_reduction(verdict, tmp_path):
    rng = np.random.default_rng(2)
    fwd = bwd = 0.0
    for mode in ("in", "out"):
        for groups in (1, 2, 4):
            layer = L.PowConv2D(4, 8, 3, 1, 1, mode=mode, groups=groups, rng=rng)
            x = rng.standard_normal((2, 4, 7, 7))
            g = rng.standard_normal((2, 8, 7, 7))
            kernel = ConvKernel(layer.params["weight"], 1, 1)
            fwd = max(fwd, np.abs(layer.forward(x) - conv2d(x, kernel)).max())
            layer.zero_grad()
            gx = layer.backward(g)
            gx_ref, gw_ref = conv2d_backward(x, kernel, g)
            bwd = max(bwd, np.abs(gx - gx_ref).max(), np.abs(layer.grads["weight"] - gw_ref).max())
    from powconv.cnn import synthetic_images
    x, y = synthetic_images(400, 5, 4)
    xt, yt = synthetic_images(100, 5, 4, draw=1)
    data = (x[..., :16, :16] / 255.0, y, xt[..., :16, :16] / 255.0, yt)
    cfg = default_config("CnnTrain").with_overrides(epochs=5, batch_size=32, out=tmp_path,
                                                    data={"widths": "8,16,16"})
    base = train_cnn(cfg.with_overrides(variant="base"), data).history.losses
    frozen = train_cnn(cfg.with_overrides(variant="in1", optim=replace(cfg.optim, freeze_pow=True)),
                       data).history.losses
    curve = float(np.max(np.abs(np.array(frozen) - np.array(base))))
    ok = fwd <= 1e-12 and bwd <= 1e-10 and curve <= 1e-6
    verdict("2 identity reduction", ok,
            f"forward {fwd:.1e} (<= 1e-12), backward {bwd:.1e} (<= 1e-10), "
            f"frozen-vs-base loss curve {curve:.1e} over {len(base)} epochs (<= 1e-6)")


def _means(rows):
    return {(r["N"], r["variant"]): r["test_mean"] for r in rows}


def test_criterion_3_table1(verdict, tmp_path):
    cfg = default_config("Table1").with_overrides(runs=10, out=tmp_path)
    rows4, _ = run_table1(cfg.with_overrides(
        out=tmp_path / "n4", data={"n_values": "4", "variants": "BaseNoDivergence,Base,Tanh,Softsign,Power"}))
    rows8, _ = run_table1(cfg.with_overrides(
        out=tmp_path / "n8", data={"n_values": "8", "variants": "Base,Tanh,Softsign,Power"}))
    m = _means(rows4 + rows8)
    failed = sum(r["n_failed"] for r in rows4 + rows8)
    a = m[4, "BaseNoDivergence"] - m[4, "Base"]
    order = ("Power", "Softsign", "Tanh", "Base")
    gaps = {N: [m[N, hi] - m[N, lo] for hi, lo in zip(order, order[1:])] for N in (4, 8)}
    ok_a = a >= 3
    ok_b = all(g >= 2 for v in gaps.values() for g in v)
    ok_c = abs(m[4, "Power"] - 97.5) <= 5
    table = "; ".join(f"N={N} " + " ".join(f"{v}={m[N, v]:.1f}" for v in order) for N in (4, 8))
    verdict("3 Table 1", ok_a and ok_b and ok_c and failed == 0,
            f"(a) BaseNoDivergence-Base {a:.1f} (>= 3); (b) gaps N=4 {[round(g, 1) for g in gaps[4]]} "
            f"N=8 {[round(g, 1) for g in gaps[8]]} (>= 2); (c) Power N=4 {m[4, 'Power']:.1f} "
            f"(97.5 +- 5); diverged runs {failed}; {table}")


def test_criterion_4_table2(verdict, tmp_path):
    start = time.perf_counter()
    cfg = default_config("Table2").with_overrides(runs=10, out=tmp_path,
                                                  data={"m_values": "256", "hidden_sizes": "64,256,1024"})
    rows, _ = run_table2(cfg)
    seconds = time.perf_counter() - start
    main = {r["hidden"]: r["all_r_mean"] for r in rows if r["row"] == "power"}
    control = next(r["all_r_mean"] for r in rows if r["row"] == "identity-control")
    gain = main[64] - min(main[256], main[1024])
    ok = min(main.values()) > 30 and gain <= 5 and control < 5 and seconds < 1800
    verdict("4 Table 2", ok,
            f"M=256 R by hidden {main} (> 30), gain from more units {gain:.2f} (<= 5), "
            f"identity control R {control} (< 5), {seconds:.0f}s (< 1800s)")


def test_criterion_5_sampler(verdict):
    ks_pass = sum(sd.ks_test_normal(sd.gnd_sample(sd.GndConfig(), 10_000, seed=s), significance=0.01)[2]
                  for s in range(10))
    skew_ok, skew_total = 0, 0
    for kappa in (-0.8, -0.3, 0.3, 0.8):
        for s in range(20):
            x = sd.gnd_sample(sd.GndConfig(kappa=kappa), 100_000, seed=s)
            skew_ok += np.sign(sd.dist_moments(x).skewness) == -np.sign(kappa)
            skew_total += 1
    verdict("5 sampler", ks_pass >= 9 and skew_ok == skew_total,
            f"KS at 0.01 passed {ks_pass}/10 seeds (>= 9); skew sign opposite to kappa "
            f"on {skew_ok}/{skew_total} (kappa in +-0.3, +-0.8, 20 seeds each)")


def test_criterion_6_deformation_contracts(verdict, natural_images):
    rng = np.random.default_rng(6)
    images = list(natural_images.values())
    ctx = dict(donors=images[:1], net=None)
    identity = [("Identity", {}), ("Rotation", {"angle": 0}), ("Perspective", {"bound": 0}),
                ("SaltPepper", {"rate": 0}), ("RandomNoise", {"sigma": 0}),
                ("StructuredNoise", {"sigma": 0}), ("InPaint", {"transparency": 1}),
                ("TargetedOcclude", {"count": 0})]
    bit_exact = all(np.array_equal(D.apply(im, D.DeformSpec(k, p, 1), **ctx), im)
                    for im in images for k, p in identity)
    rate_err = max(abs(np.any(D.salt_pepper(im, r, seed=s) != im, axis=2).mean() - r)
                   for im in images for r in (0.05, 0.1, 0.2) for s in range(3))
    rows_ok = all(np.array_equal(D.structured_noise(im, 0.3, seed=s)[1::2], im[1::2])
                  for im in images for s in range(3))
    min_area = 1.0
    for s in range(300):
        h, w = rng.integers(1, 200, 2)
        _, (_, _, ph, pw) = D.patch_occlude(np.zeros((h, w, 3)), images[1:2], 1 / 64, s, return_box=True)
        min_area = min(min_area, ph * pw / (h * w))
    from powconv.network import Sequential
    small = D.to_uint8(images[0][::6, ::6]) / 255.0
    net = Sequential([L.Conv2D(3, 2, 3, 1, 1, rng), L.Flatten(),
                      L.Linear(2 * small.shape[0] * small.shape[1], 3, rng, "lecun")])
    repro = all(np.array_equal(D.apply(small, D.DeformSpec(k, {}, s), donors=images[:2], net=net, class_id=1),
                               D.apply(small, D.DeformSpec(k, {}, s), donors=images[:2], net=net, class_id=1))
                for k in D.KINDS for s in (0, 1))
    ok = bit_exact and rate_err <= 0.005 and rows_ok and min_area >= 1 / 64 and repro
    verdict("6 deformation contracts", ok,
            f"identity configs bit-exact {bit_exact}; salt-pepper rate error {rate_err:.4f} (<= 0.005); "
            f"odd rows untouched {rows_ok}; min patch area {min_area:.4f} (>= {1 / 64:.4f}); "
            f"all {len(D.KINDS)} kinds reproducible {repro}")


def _cnn_smoke(cifar_dir, out, n_train, widths):
    cfg = default_config("CnnTrain").with_overrides(
        epochs=20, out=out, data={"cifar_dir": str(cifar_dir), "n_train": str(n_train),
                                  "n_test": "1000", "widths": widths})
    base = train_cnn(cfg.with_overrides(variant="base"))
    power = train_cnn(cfg.with_overrides(variant="in1"))
    b, p = base.history.test_acc[-1], power.history.test_acc[-1]
    finite = not power.diverged and np.all(np.isfinite(power.history.losses))
    return finite and p >= b - 1, f"IN-ch L=1 {p:.2f}% vs base {b:.2f}% (>= base - 1), no NaN {finite}"


def test_criterion_7_cnn_cifar10(verdict, tmp_path):
    if not (CIFAR_DIR / "data_batch_1.bin").is_file():
        verdict("7 CIFAR-10 CNN smoke", False,
                f"CIFAR-10 binaries not found at {CIFAR_DIR} (set CIFAR10_DIR); not run")
    ok, detail = _cnn_smoke(CIFAR_DIR, tmp_path, 5000, "32,64,128")
    verdict("7 CIFAR-10 CNN smoke", ok, "5000 images, 20 epochs, " + detail)


def test_criterion_7_synthetic_stand_in(verdict, tmp_path):
    data = write_synthetic_cifar(tmp_path / "data", per_file=400, n_test=1000, seed=7, noise=2.0)
    ok, detail = _cnn_smoke(data, tmp_path / "run", 2000, "16,32,64")
    verdict("7 synthetic stand-in (not CIFAR-10)", ok, "2000 images, widths 16/32/64, 20 epochs, " + detail)


def test_criterion_8_divergence_pipeline(verdict, toy_model, tmp_path):
    ckpt, corpus = toy_model
    rows = run_stats(ExperimentConfig("Stats", seed=8, out=tmp_path,
                                      data={"checkpoint": str(ckpt), "images": str(corpus)}))
    positive = all(r["jsd_ab"] > 0 for r in rows)
    symmetric = all(r["jsd_ab"] == r["jsd_ba"] for r in rows)
    verdict("8 divergence pipeline", positive and symmetric and len(rows) > 1,
            f"{len(rows)} layers, min JSD {min(r['jsd_ab'] for r in rows):.3g} (> 0), "
            f"JSD(p,q) == JSD(q,p) exactly {symmetric}")
