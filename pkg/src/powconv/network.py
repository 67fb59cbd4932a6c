"""Sequential networks, checkpoints and a minimal training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from .errors import ConfigurationError, DataError
from .optim import SGD, OptimConfig
from .tensor import read_tensor, write_tensor

log = logging.getLogger(__name__)

LAYER_TYPES = {cls.__name__: cls for cls in (
    L.Linear, L.Conv2D, L.PowConv2D, L.Power, L.BatchNorm,
    L.ReLU, L.Tanh, L.Softsign, L.MaxPool2D, L.Flatten)}

MANIFEST = "manifest.txt"


class Sequential:
    """An ordered stack of layers with one loss head."""

    def __init__(self, layers, loss="SoftmaxCrossEntropy"):
        self.layers = list(layers)
        if loss not in L.LOSSES:
            raise ConfigurationError(f"unknown loss head {loss!r}")
        self.loss_name = loss
        self.loss = L.LOSSES[loss]()

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def loss_and_grads(self, x, y, train=True) -> float:
        """Forward, loss and full backward; leaves gradients on the layers."""
        out = self.forward(x, train)
        value = self.loss.forward(out, y)
        self.backward(self.loss.backward())
        return value

    def predict(self, x, batch_size=256):
        outs = [self.forward(x[i:i + batch_size], train=False)
                for i in range(0, len(x), batch_size)]
        return np.concatenate(outs)

    def activations(self, x, batch_size=256):
        """Per-layer outputs in eval mode, keyed ``"<index>_<LayerName>"``."""
        keys = [f"{i:02d}_{type(layer).__name__}" for i, layer in enumerate(self.layers)]
        chunks = {k: [] for k in keys}
        for start in range(0, len(x), batch_size):
            h = x[start:start + batch_size]
            for key, layer in zip(keys, self.layers):
                h = layer.forward(h, train=False)
                chunks[key].append(h)
        return {k: np.concatenate(v) for k, v in chunks.items()}

    def parameters(self):
        """Yield ``(layer_index, name, array)`` for every learnable array."""
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield i, name, p

    def n_parameters(self) -> int:
        return sum(p.size for _, _, p in self.parameters())

    def __repr__(self):
        body = "\n  ".join(repr(layer) for layer in self.layers)
        return f"Sequential(\n  {body}\n  loss={self.loss_name})"


# --------------------------------------------------------------------------
# checkpoints: a directory of PCT1 tensors plus a text manifest
# --------------------------------------------------------------------------

def _layer_tensors(layer):
    tensors = dict(layer.params)
    if isinstance(layer, L.BatchNorm):
        tensors["running_mean"] = layer.running_mean
        tensors["running_var"] = layer.running_var
    return tensors


def save_checkpoint(net: Sequential, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, layer in enumerate(net.layers):
        cfg = " ".join(f"{k}={v}" for k, v in layer.config().items())
        lines.append(f"{type(layer).__name__} {cfg}".rstrip())
        for name, arr in _layer_tensors(layer).items():
            write_tensor(directory / f"{i:02d}.{name}.pct", arr)
    lines.append(f"Loss {net.loss_name}")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")
    return directory


def _build_layer(kind, cfg):
    if kind not in LAYER_TYPES:
        raise DataError(f"unknown layer kind {kind!r} in manifest")
    ints = {k: int(v) for k, v in cfg.items() if k != "mode"}
    if kind == "Linear":
        return L.Linear(ints["in"], ints["out"], init="zeros")
    if kind == "Conv2D":
        return L.Conv2D(ints["in"], ints["out"], ints["k"], ints["stride"], ints["pad"],
                        bias=bool(ints.get("bias", 0)))
    if kind == "PowConv2D":
        return L.PowConv2D(ints["in"], ints["out"], ints["k"], ints["stride"], ints["pad"],
                           mode=cfg["mode"], groups=ints["groups"],
                           split_sign=bool(ints["split"]), nonneg_input=bool(ints["nonneg"]))
    if kind == "Power":
        return L.Power(ints["features"], bool(ints["split"]))
    if kind == "BatchNorm":
        return L.BatchNorm(ints["features"], bool(ints["affine"]))
    return LAYER_TYPES[kind]()


def load_checkpoint(directory) -> Sequential:
    directory = Path(directory)
    lines = [ln.split() for ln in (directory / MANIFEST).read_text().splitlines() if ln.strip()]
    if not lines or lines[-1][0] != "Loss":
        raise DataError(f"{directory / MANIFEST}: last line must name the loss head")
    layers = []
    for i, (kind, *fields_) in enumerate(lines[:-1]):
        cfg = dict(f.split("=", 1) for f in fields_)
        layer = _build_layer(kind, cfg)
        for name, arr in _layer_tensors(layer).items():
            loaded = read_tensor(directory / f"{i:02d}.{name}.pct")
            if loaded.shape != arr.shape:
                raise DataError(f"layer {i} {name}: shape {loaded.shape} != {arr.shape}")
            arr[...] = loaded
        layers.append(layer)
    return Sequential(layers, loss=lines[-1][1])


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass
class TrainLog:
    losses: list = field(default_factory=list)       # mean train loss per epoch
    train_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    diverged: bool = False


def accuracy(net: Sequential, x, y, batch_size=256) -> float:
    return float(np.mean(np.argmax(net.predict(x, batch_size), axis=1) == y) * 100.0)


def fit(net: Sequential, x, y, epochs, batch_size, rng, optim: OptimConfig | None = None,
        x_test=None, y_test=None, track_accuracy=False, on_epoch=None) -> TrainLog:
    """Mini-batch SGD over ``epochs`` passes; stops early on a non-finite loss."""
    opt = SGD(net, optim)
    history = TrainLog()
    n = len(x)
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            if len(idx) < 2 and start:
                continue  # batch norm cannot train on a single sample
            loss = net.loss_and_grads(x[idx], y[idx])
            if not math.isfinite(loss):
                log.warning("non-finite loss at epoch %d; stopping", epoch)
                history.diverged = True
                return history
            opt.step()
            total += loss * len(idx)
        history.losses.append(total / n)
        if track_accuracy:
            history.train_acc.append(accuracy(net, x, y))
            if x_test is not None:
                history.test_acc.append(accuracy(net, x_test, y_test))
        if on_epoch is not None:
            on_epoch(epoch, net, history)
    return history
