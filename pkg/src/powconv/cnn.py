"""Small VGG-style CNN on CIFAR-10-format data.

The network is three blocks of ``conv 3x3 -> batch norm -> ReLU -> 2x2
max-pool`` followed by one dense layer.  Variants:

* ``base`` uses plain convolutions,
* ``in<L>`` uses in-channel powered convolutions with ``L`` groups,
* ``out<L>`` uses out-channel powered convolutions with ``L`` groups.

Data comes from the CIFAR-10 binary distribution (``data_batch_1.bin`` ...
``data_batch_5.bin`` and ``test_batch.bin``, 3073-byte records) or from a
synthetic corpus written in the same format by :func:`write_synthetic_cifar`.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import layers as L
from .config import ExperimentConfig
from .errors import ConfigurationError, DataError
from .network import Sequential, TrainLog, accuracy, fit, save_checkpoint
from .synthdata import substream
from .tables import write_csv

log = logging.getLogger(__name__)

RECORD = 3073
IMAGE_SHAPE = (3, 32, 32)
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"
CIFAR10_CLASSES = ("airplane", "automobile", "bird", "cat", "deer",
                   "dog", "frog", "horse", "ship", "truck")


# --------------------------------------------------------------------------
# CIFAR-10 binary format
# --------------------------------------------------------------------------

def read_cifar_batch(path):
    """``(images uint8 [n, 3, 32, 32], labels int64 [n])`` from one batch file."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD:
        raise DataError(f"{path}: size {raw.size} is not a multiple of {RECORD}")
    rec = raw.reshape(-1, RECORD)
    return rec[:, 1:].reshape(-1, *IMAGE_SHAPE), rec[:, 0].astype(np.int64)


def write_cifar_batch(path, images, labels) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    if images.shape[1] != RECORD - 1:
        raise DataError(f"images must be 3x32x32, got {images.shape[1]} bytes each")
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    rec.tofile(path)


def _read_split(directory, names):
    parts = []
    for name in names:
        path = Path(directory) / name
        if not path.is_file():
            raise DataError(f"missing CIFAR-10 batch file {path}")
        parts.append(read_cifar_batch(path))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _subset(x, y, n, rng, classes):
    if classes is not None:
        keep = np.isin(y, classes)
        x, y = x[keep], y[keep]
        y = np.searchsorted(np.asarray(sorted(classes)), y)
    if n is not None and n < len(y):
        idx = np.sort(rng.choice(len(y), size=n, replace=False))
        x, y = x[idx], y[idx]
    return x.astype(np.float64) / 255.0, y


def load_cifar10(directory, n_train=None, n_test=None, seed=0, classes=None):
    """Seeded subsets of the training and test splits, scaled to ``[0, 1]``.

    ``classes`` keeps only those label ids and renumbers them ``0..k-1`` in
    ascending order.
    """
    x_tr, y_tr = _read_split(directory, TRAIN_FILES)
    x_te, y_te = _read_split(directory, (TEST_FILE,))
    x_tr, y_tr = _subset(x_tr, y_tr, n_train, substream(seed, "cifar-train"), classes)
    x_te, y_te = _subset(x_te, y_te, n_test, substream(seed, "cifar-test"), classes)
    if len(y_tr) == 0 or len(y_te) == 0:
        raise DataError("empty training or test subset")
    return x_tr, y_tr, x_te, y_te


def synthetic_images(n, seed, n_classes=10, noise=0.15, draw=0):
    """Class-conditional 32x32 colour images with a learnable structure.

    Every class owns a smooth random colour pattern fixed by ``seed``; an
    image is its class pattern rolled by a random offset of up to 4 pixels,
    with a random brightness and additive pixel noise.  Different ``draw``
    values give independent images of the same classes.
    """
    proto_rng = substream(seed, "synthetic-prototypes")
    coarse = proto_rng.uniform(0.0, 1.0, (n_classes, 3, 4, 4))
    protos = np.kron(coarse, np.ones((1, 1, 8, 8)))
    rng = substream(seed, "synthetic-images", n, draw)
    labels = rng.integers(0, n_classes, n)
    shifts = rng.integers(-4, 5, (n, 2))
    gain = rng.uniform(0.7, 1.3, n)
    images = np.empty((n, *IMAGE_SHAPE))
    for i in range(n):
        images[i] = np.roll(protos[labels[i]], tuple(shifts[i]), axis=(1, 2)) * gain[i]
    images += noise * rng.standard_normal(images.shape)
    return np.round(np.clip(images, 0, 1) * 255).astype(np.uint8), labels


def write_synthetic_cifar(directory, per_file=1000, n_test=1000, seed=0, n_classes=10,
                          noise=0.15) -> Path:
    """Write a stand-in corpus in the CIFAR-10 binary layout."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(TRAIN_FILES):
        x, y = synthetic_images(per_file, seed, n_classes, noise, draw=i)
        write_cifar_batch(directory / name, x, y)
    x, y = synthetic_images(n_test, seed, n_classes, noise, draw=len(TRAIN_FILES))
    write_cifar_batch(directory / TEST_FILE, x, y)
    return directory


# --------------------------------------------------------------------------
# the network
# --------------------------------------------------------------------------

def parse_variant(name: str):
    """``"base"`` -> ``(None, 1)``; ``"in2"`` -> ``("in", 2)``; ``"out4"`` -> ``("out", 4)``."""
    name = (name or "base").strip().lower()
    if name == "base":
        return None, 1
    m = re.fullmatch(r"(in|out)(\d+)", name)
    if not m or int(m.group(2)) < 1:
        raise ConfigurationError(f"unknown CNN variant {name!r}; use base, in<L> or out<L>")
    return m.group(1), int(m.group(2))


def cnn_network(variant="base", rng=None, n_classes=10, widths=(32, 64, 128),
                image_size=32, nonneg=True) -> Sequential:
    """Three conv blocks plus a dense head.

    Blocks 2 and 3 see ReLU/max-pool outputs, so with ``nonneg`` their
    in-channel power functions skip the negative branch.  An out-channel
    first block has only 3 input channels to split, so it uses one group
    whenever the requested count does not divide 3.
    """
    mode, groups = parse_variant(variant)
    layers, c = [], 3
    for i, width in enumerate(widths):
        if mode is None:
            conv = L.Conv2D(c, width, 3, 1, 1, rng)
        else:
            split = width if mode == "in" else c
            g = groups if split % groups == 0 else 1
            conv = L.PowConv2D(c, width, 3, 1, 1, mode=mode, groups=g,
                               nonneg_input=nonneg and i > 0, rng=rng)
        layers += [conv, L.BatchNorm(width), L.ReLU(), L.MaxPool2D()]
        c = width
    side = image_size // 2 ** len(widths)
    layers += [L.Flatten(), L.Linear(c * side * side, n_classes, rng, "lecun")]
    return Sequential(layers, "SoftmaxCrossEntropy")


@dataclass
class CnnResult:
    net: Sequential
    history: TrainLog
    checkpoint: Path
    log_path: Path

    @property
    def diverged(self):
        return self.history.diverged


CNN_COLUMNS = ["table", "variant", "epoch", "loss", "train_acc", "test_acc", "test_err"]


def cnn_data(cfg: ExperimentConfig):
    classes = cfg.get_list("classes", [], int) or None
    directory = cfg.get("cifar_dir")
    if directory is None:
        raise ConfigurationError("[data] cifar_dir is required for CNN training")
    return load_cifar10(directory, cfg.get_int("n_train", 5000), cfg.get_int("n_test", 1000),
                        cfg.seed, classes)


def train_cnn(cfg: ExperimentConfig, data=None, progress=None) -> CnnResult:
    """Train one variant; log per epoch; keep the last finite checkpoint.

    ``[data]`` keys: ``cifar_dir``, ``n_train`` (5000), ``n_test`` (1000),
    ``classes`` (all), ``widths`` (32,64,128), ``nonneg`` (true).
    ``cfg.variant`` picks ``base``, ``in<L>`` or ``out<L>``.
    """
    x_tr, y_tr, x_te, y_te = data if data is not None else cnn_data(cfg)
    n_classes = int(max(y_tr.max(), y_te.max())) + 1
    variant = (cfg.variant or "base").lower()
    net = cnn_network(variant, substream(cfg.seed, "cnn-init"), n_classes,
                      tuple(cfg.get_list("widths", [32, 64, 128], int)),
                      x_tr.shape[-1], cfg.get_bool("nonneg", True))
    out = Path(cfg.out)
    ckpt = out / f"checkpoint_{variant}"
    rows = []

    def on_epoch(epoch, net, history):
        test_acc = accuracy(net, x_te, y_te)
        rows.append({"table": "Table 3", "variant": variant, "epoch": epoch + 1,
                     "loss": round(history.losses[-1], 8),
                     "train_acc": round(history.train_acc[-1], 4),
                     "test_acc": round(test_acc, 4), "test_err": round(100.0 - test_acc, 4)})
        history.test_acc.append(test_acc)
        save_checkpoint(net, ckpt)
        if progress:
            progress(rows[-1])

    history = fit(net, x_tr, y_tr, cfg.epochs, cfg.batch_size, substream(cfg.seed, "cnn-shuffle"),
                  cfg.optim, track_accuracy=True, on_epoch=on_epoch)
    if history.diverged:
        log.error("training diverged; %s holds the last finite checkpoint", ckpt)
    log_path = write_csv(out / f"cnn_{variant}.csv", CNN_COLUMNS, rows)
    return CnnResult(net, history, ckpt, log_path)
