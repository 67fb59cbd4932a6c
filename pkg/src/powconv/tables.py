"""Drivers for the two small synthetic experiments.

``run_table1``: classifying sign-coded GND features with a 128-unit
two-layer network, where the test features may follow different shape
parameters than the training ones, comparing input pre-processing variants.

``run_table2``: regressing element-wise powers ``y = x ** a`` with a
two-layer ReLU network, scored by the ratio metric R.

Both write CSV files into ``config.out`` and return the summary rows.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import layers as L
from .config import ExperimentConfig
from .errors import ConfigurationError
from .network import Sequential, accuracy, fit
from .synthdata import (SyntheticClassSpec, make_classification_dataset,
                        make_power_regression_dataset, ratio_metric, substream)

log = logging.getLogger(__name__)

TABLE1_VARIANTS = ("BaseNoDivergence", "Base", "BatchNormOnly", "BatchNormTrans",
                   "BasePlus1Layer", "BasePlus2Layers", "Tanh", "Softsign", "Power")


def derived_seed(seed, *keys) -> int:
    return int(substream(seed, *keys).integers(2 ** 63))


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[h] for h in header])
    return path


def _fmt(x):
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else round(float(x), 4)


# --------------------------------------------------------------------------
# Table 1
# --------------------------------------------------------------------------

def table1_network(variant: str, n_classes: int, rng, n_features=128, hidden=128) -> Sequential:
    """Two-layer classifier with the variant's input stage or extra layers."""
    if variant not in TABLE1_VARIANTS:
        raise ConfigurationError(f"unknown Table 1 variant {variant!r}")
    front = {
        "Power": lambda: [L.Power(1)],
        "Tanh": lambda: [L.Tanh()],
        "Softsign": lambda: [L.Softsign()],
        "BatchNormOnly": lambda: [L.BatchNorm(n_features, affine=False)],
        "BatchNormTrans": lambda: [L.BatchNorm(n_features, affine=True)],
    }.get(variant, list)()
    layers = front + [L.Linear(n_features, hidden, rng, "he"), L.ReLU()]
    for _ in range({"BasePlus1Layer": 1, "BasePlus2Layers": 2}.get(variant, 0)):
        layers += [L.Linear(hidden, hidden, rng, "he"), L.ReLU()]
    layers.append(L.Linear(hidden, n_classes, rng, "lecun"))
    return Sequential(layers, "SoftmaxCrossEntropy")


@dataclass
class Table1Run:
    variant: str
    N: int
    run: int
    train_acc: float
    test_acc: float
    diverged: bool
    alpha: float = float("nan")
    beta: float = float("nan")


def table1_run(variant, N, run, cfg: ExperimentConfig, datasets=None) -> Table1Run:
    """Train and score one variant on the ``(N, run)`` dataset.

    All variants of the same ``(N, run)`` see the same data, the same weight
    initialisation and the same mini-batch order.
    """
    n_features = cfg.get_int("n_features", 128)
    if datasets is None:
        datasets = table1_datasets(N, run, cfg)
    train, test = datasets[variant != "BaseNoDivergence"]
    net = table1_network(variant, 2 ** N, substream(cfg.seed, "table1-init", N, run),
                         n_features, cfg.get_int("hidden", 128))
    history = fit(net, train.x, train.y, cfg.epochs, cfg.batch_size,
                  substream(cfg.seed, "table1-shuffle", N, run), cfg.optim)
    result = Table1Run(variant, N, run, float("nan"), float("nan"), history.diverged)
    if not history.diverged:
        result.train_acc = accuracy(net, train.x, train.y)
        result.test_acc = accuracy(net, test.x, test.y)
    if variant == "Power":
        result.alpha = float(net.layers[0].params["alpha"][0])
        result.beta = float(net.layers[0].params["beta"][0])
    return result


def table1_datasets(N, run, cfg: ExperimentConfig):
    """``{False: (train, test) without shift, True: (train, test) with shift}``."""
    spec = SyntheticClassSpec(n_features=cfg.get_int("n_features", 128), n_determinant=N,
                              n_train=cfg.get_int("n_train", 10_000),
                              n_test=cfg.get_int("n_test", 10_000),
                              seed=derived_seed(cfg.seed, "table1-data", N, run))
    return {d: make_classification_dataset(spec, diverged=d) for d in (False, True)}


def summarize_table1(results):
    rows = []
    keys = sorted({(r.N, r.variant) for r in results},
                  key=lambda k: (k[0], TABLE1_VARIANTS.index(k[1])))
    for N, variant in keys:
        runs = [r for r in results if r.N == N and r.variant == variant]
        ok = [r for r in runs if not r.diverged]
        failed = len(runs) - len(ok)
        if failed:
            log.warning("%s N=%d: %d of %d runs diverged and are excluded", variant, N, failed, len(runs))
        test = np.array([r.test_acc for r in ok])
        train = np.array([r.train_acc for r in ok])
        rows.append({
            "table": "Table 1", "variant": variant, "N": N, "runs": len(runs),
            "n_ok": len(ok), "n_failed": failed,
            "test_mean": _fmt(test.mean()) if ok else "nan",
            "test_std": _fmt(test.std()) if ok else "nan",
            "train_mean": _fmt(train.mean()) if ok else "nan",
        })
    return rows


TABLE1_COLUMNS = ["table", "variant", "N", "runs", "n_ok", "n_failed",
                  "test_mean", "test_std", "train_mean"]
TABLE1_RUN_COLUMNS = ["variant", "N", "run", "train_acc", "test_acc", "diverged", "alpha", "beta"]


def run_table1(cfg: ExperimentConfig, progress=None):
    """Every requested (N, variant) over ``cfg.runs`` runs.

    ``[data]`` keys: ``n_values`` (default 1,2,4,8), ``variants`` (default
    all, or ``cfg.variant``), ``n_features``, ``hidden``, ``n_train``,
    ``n_test``.  Writes ``table1.csv`` and ``table1_runs.csv``.
    """
    n_values = cfg.get_list("n_values", [1, 2, 4, 8], int)
    variants = cfg.get_list("variants", [cfg.variant] if cfg.variant else TABLE1_VARIANTS)
    for v in variants:
        if v not in TABLE1_VARIANTS:
            raise ConfigurationError(f"unknown Table 1 variant {v!r}")
    results = []
    for N in n_values:
        for run in range(cfg.runs):
            data = table1_datasets(N, run, cfg)
            for variant in variants:
                r = table1_run(variant, N, run, cfg, data)
                results.append(r)
                if progress:
                    progress(r)
    rows = summarize_table1(results)
    write_csv(cfg.out / "table1.csv", TABLE1_COLUMNS, rows)
    write_csv(cfg.out / "table1_runs.csv", TABLE1_RUN_COLUMNS,
              [{k: (_fmt(v) if isinstance(v, float) else v) for k, v in asdict(r).items()}
               for r in results])
    return rows, results


# --------------------------------------------------------------------------
# Table 2
# --------------------------------------------------------------------------

def table2_network(M: int, hidden: int, rng) -> Sequential:
    return Sequential([L.Linear(M, hidden, rng, "he"), L.ReLU(),
                       L.Linear(hidden, M, rng, "lecun")], "MeanSquaredError")


@dataclass
class Table2Run:
    M: int
    hidden: int
    run: int
    r_mean: float
    r_std: float
    diverged: bool
    control: bool = False


def table2_run(M, hidden, run, cfg: ExperimentConfig, control=False) -> Table2Run:
    """Fit one regression network; ``control`` forces all exponents to 1."""
    n_train = cfg.get_int("n_train", 10_000)
    n_test = cfg.get_int("n_test", 10_000)
    tag = "table2-control" if control else "table2"
    data = make_power_regression_dataset(M, n_train + n_test, derived_seed(cfg.seed, tag, M, run),
                                         exponents=1.0 if control else None)
    x_tr, y_tr = data.x[:n_train], data.y[:n_train]
    x_te, y_te = data.x[n_train:], data.y[n_train:]
    net = table2_network(M, hidden, substream(cfg.seed, tag + "-init", M, hidden, run))
    history = fit(net, x_tr, y_tr, cfg.epochs, cfg.batch_size,
                  substream(cfg.seed, tag + "-shuffle", M, hidden, run), cfg.optim)
    if history.diverged:
        return Table2Run(M, hidden, run, float("nan"), float("nan"), True, control)
    _, mean, std = ratio_metric(net.predict(x_te), y_te)
    return Table2Run(M, hidden, run, mean, std, False, control)


def summarize_table2(results):
    rows = []
    for key in sorted({(r.control, r.M, r.hidden) for r in results}):
        control, M, hidden = key
        runs = [r for r in results if (r.control, r.M, r.hidden) == key]
        ok = [r for r in runs if not r.diverged]
        failed = len(runs) - len(ok)
        if failed:
            log.warning("Table 2 M=%d hidden=%d: %d runs diverged and are excluded", M, hidden, failed)
        means = np.array([r.r_mean for r in ok])
        best = min(ok, key=lambda r: r.r_mean) if ok else None
        rows.append({
            "table": "Table 2", "row": "identity-control" if control else "power",
            "M": M, "hidden": hidden, "runs": len(runs), "n_ok": len(ok), "n_failed": failed,
            "best_run": best.run if best else "nan",
            "best_r_mean": _fmt(best.r_mean) if best else "nan",
            "best_r_std": _fmt(best.r_std) if best else "nan",
            "all_r_mean": _fmt(means.mean()) if ok else "nan",
            "all_r_std": _fmt(means.std()) if ok else "nan",
        })
    return rows


TABLE2_COLUMNS = ["table", "row", "M", "hidden", "runs", "n_ok", "n_failed", "best_run",
                  "best_r_mean", "best_r_std", "all_r_mean", "all_r_std"]
TABLE2_RUN_COLUMNS = ["M", "hidden", "run", "r_mean", "r_std", "diverged", "control"]


def run_table2(cfg: ExperimentConfig, progress=None):
    """Every (M, hidden) cell over ``cfg.runs`` runs, plus the identity control.

    ``[data]`` keys: ``m_values`` (16,64,256), ``hidden_sizes``
    (64,256,1024), ``n_train``, ``n_test``, ``control`` (true),
    ``control_m`` (16), ``control_hidden`` (64), ``control_runs`` (3),
    ``control_epochs`` (100).  The best run of a cell is the one with the
    lowest mean R.
    """
    m_values = cfg.get_list("m_values", [16, 64, 256], int)
    hidden_sizes = cfg.get_list("hidden_sizes", [64, 256, 1024], int)
    results = []
    for M in m_values:
        for hidden in hidden_sizes:
            for run in range(cfg.runs):
                r = table2_run(M, hidden, run, cfg)
                results.append(r)
                if progress:
                    progress(r)
    if cfg.get_bool("control", True):
        M, hidden = cfg.get_int("control_m", 16), cfg.get_int("control_hidden", 64)
        control_cfg = cfg.with_overrides(epochs=cfg.get_int("control_epochs", 100))
        for run in range(cfg.get_int("control_runs", 3)):
            r = table2_run(M, hidden, run, control_cfg, control=True)
            results.append(r)
            if progress:
                progress(r)
    rows = summarize_table2(results)
    write_csv(cfg.out / "table2.csv", TABLE2_COLUMNS, rows)
    write_csv(cfg.out / "table2_runs.csv", TABLE2_RUN_COLUMNS,
              [{k: (_fmt(v) if isinstance(v, float) else v) for k, v in asdict(r).items()}
               for r in results])
    return rows, results
