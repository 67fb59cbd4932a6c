"""Activation dumps and distribution comparisons.

A dump is a directory holding one PCT1 tensor per layer, named after the
layer key (``03_ReLU.pct``).  Two dumps with the same layer names can be
compared layer by layer: moments of each side and the Jensen-Shannon
divergence of their histograms over shared bin edges.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np

from . import deform
from .config import ExperimentConfig
from .errors import ConfigurationError, DataError
from .network import Sequential, load_checkpoint
from .synthdata import (DegenerateDistributionError, GndConfig, dist_moments,
                        gnd_sample, histogram, js_divergence, pooled_edges,
                        substream)
from .tables import derived_seed, write_csv
from .tensor import read_tensor, write_tensor

log = logging.getLogger(__name__)

STATS_COLUMNS = ["table", "layer", "n_a", "n_b",
                 "mean_a", "var_a", "skew_a", "kurt_a",
                 "mean_b", "var_b", "skew_b", "kurt_b",
                 "jsd_ab", "jsd_ba"]


def dump_activations(net: Sequential, x, directory, batch_size=256) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(directory / "00_input.pct", x)
    for key, act in net.activations(x, batch_size).items():
        write_tensor(directory / f"{int(key[:2]) + 1:02d}{key[2:]}.pct", act)
    return directory


def read_dump(directory) -> dict:
    files = sorted(Path(directory).glob("*.pct"))
    if not files:
        raise DataError(f"no .pct tensors in {directory}")
    return {f.stem: read_tensor(f) for f in files}


def _side(values, edges):
    """Histogram over ``edges`` and ``(mean, var, skew, kurt)``; NaN shape moments if constant."""
    counts = histogram(values, edges)
    try:
        s = dist_moments(values, edges=edges)
        return counts, (s.mean, s.variance, s.skewness, s.excess_kurtosis)
    except DegenerateDistributionError:
        return counts, (float(np.mean(values)), 0.0, math.nan, math.nan)


def compare_dumps(a: dict, b: dict, bins=100, table="Figure 1"):
    """Per-layer moments of both dumps and the divergence in both argument orders."""
    if sorted(a) != sorted(b):
        raise DataError(f"layer names differ: {sorted(set(a) ^ set(b))}")
    rows = []
    for layer in sorted(a):
        edges = pooled_edges(a[layer], b[layer], bins)
        ca, ma = _side(a[layer], edges)
        cb, mb = _side(b[layer], edges)
        row = {"table": table, "layer": layer, "n_a": np.size(a[layer]), "n_b": np.size(b[layer])}
        for side, m in (("a", ma), ("b", mb)):
            for name, v in zip(("mean", "var", "skew", "kurt"), m):
                row[f"{name}_{side}"] = v
        row["jsd_ab"] = js_divergence(ca, cb)
        row["jsd_ba"] = js_divergence(cb, ca)
        rows.append(row)
    return rows


def _stats_inputs(cfg: ExperimentConfig):
    """Evaluation images as ``[n, H, W, 3]`` from a corpus or a CIFAR directory."""
    n = cfg.get_int("n_images", 200)
    if cfg.get("images"):
        from .robustness import list_corpus
        files = list_corpus(cfg.get("images"))[:n]
        return np.stack([deform.read_image(f) for f in files])
    if cfg.get("cifar_dir"):
        from .cnn import load_cifar10
        _, _, x, _ = load_cifar10(cfg.get("cifar_dir"), n_train=1, n_test=n, seed=cfg.seed)
        return x.transpose(0, 2, 3, 1)
    raise ConfigurationError("[data] needs images or cifar_dir to dump activations")


def gnd_report(cfg: ExperimentConfig):
    """Moments of GND samples before and after a power mapping.

    ``gnd_kappas`` lists shape parameters; ``exponent`` is the power applied
    as ``sign(x) |x| ** exponent``.  With ``exponent_is_alpha = true`` the
    value is read as alpha instead, so the applied power is ``exponent + 1``.
    """
    kappas = cfg.get_list("gnd_kappas", [-0.8, 0.0, 0.8], float)
    e = cfg.get_float("exponent", 0.25)
    power = e + 1.0 if cfg.get_bool("exponent_is_alpha", False) else e
    n = cfg.get_int("n_samples", 100_000)
    rows = []
    for kappa in kappas:
        x = gnd_sample(GndConfig(kappa=kappa), n, rng=substream(cfg.seed, "gnd-report", str(kappa)))
        y = np.sign(x) * np.abs(x) ** power
        for row in compare_dumps({"raw": x}, {"raw": y}, cfg.get_int("bins", 100), "Figure 2"):
            row["layer"] = f"kappa={kappa:g},power={power:g}"
            rows.append(row)
    return rows


def run_stats(cfg: ExperimentConfig):
    """Write ``stats.csv`` for whichever inputs ``[data]`` provides.

    * ``dump_a`` and ``dump_b``: compare two existing dumps;
    * ``checkpoint`` plus ``images`` or ``cifar_dir``: dump activations for
      the original images and for a deformed copy (``deformation``, default
      ``SaltPepper`` with ``rate = 0.2``), then compare;
    * ``gnd_kappas``: the power-mapping report on GND samples.
    """
    bins = cfg.get_int("bins", 100)
    out = Path(cfg.out)
    if cfg.get("dump_a") and cfg.get("dump_b"):
        rows = compare_dumps(read_dump(cfg.get("dump_a")), read_dump(cfg.get("dump_b")), bins)
    elif cfg.get("checkpoint"):
        net = load_checkpoint(cfg.get("checkpoint"))
        imgs = _stats_inputs(cfg)
        kind = cfg.get("deformation", "SaltPepper")
        params = cfg.get("deformation_params", "rate=0.2" if kind == "SaltPepper" else "")
        deformed = np.stack([
            deform.apply_chain(img, deform.parse_chain(kind, params,
                                                       derived_seed(cfg.seed, "stats", i) % 2 ** 31))
            for i, img in enumerate(imgs)])
        a = dump_activations(net, imgs.transpose(0, 3, 1, 2), out / "dump_original")
        b = dump_activations(net, deformed.transpose(0, 3, 1, 2), out / "dump_deformed")
        rows = compare_dumps(read_dump(a), read_dump(b), bins)
    elif cfg.get("gnd_kappas"):
        rows = gnd_report(cfg)
    else:
        raise ConfigurationError("stats needs dump_a/dump_b, a checkpoint, or gnd_kappas in [data]")
    write_csv(out / "stats.csv", STATS_COLUMNS, rows)  # full float repr keeps tiny divergences
    return rows
