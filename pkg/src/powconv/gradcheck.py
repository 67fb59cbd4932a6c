"""Finite-difference verification of every analytic gradient.

Each check draws random instances, evaluates the scalar loss
``sum(R * f(inputs))`` for a fixed random ``R``, and compares analytic
gradients with central differences.  The error of one tensor is
``||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8)`` over the
checked coordinates.  Instance ``i`` of check ``name`` is drawn from
``substream(seed, name, i)``, so any failure can be replayed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import layers as L
from . import powfn
from .network import Sequential
from .synthdata import substream

STEP = 1e-5
TOLERANCE = 1e-5
MIN_ABS_INPUT = 1e-3
POW_GROUPS = (1, 2, 4)


@dataclass
class CheckResult:
    check: str
    instance: int
    tensor: str
    error: float
    passed: bool


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def _coords(size, rng, limit):
    if limit is None or size <= limit:
        return np.arange(size)
    return rng.choice(size, size=limit, replace=False)


def numeric_grad(loss, array, coords, step=STEP, relative=False):
    """Central differences of ``loss()`` w.r.t. ``array.flat[coords]`` (perturbed in place)."""
    flat = array.reshape(-1)
    out = np.empty(len(coords))
    for j, k in enumerate(coords):
        old = flat[k]
        h = step * max(abs(old), 1.0) if not relative else step * abs(old)
        flat[k] = old + h
        up = loss()
        flat[k] = old - h
        down = loss()
        flat[k] = old
        out[j] = (up - down) / (2 * h)
    return out


def _compare(name, i, tensors, analytic, loss, rng, limit, relative=False):
    results = []
    for key, arr in tensors.items():
        coords = _coords(arr.size, rng, limit)
        num = numeric_grad(loss, arr, coords, relative=relative)
        err = rel_error(np.ravel(analytic[key])[coords], num)
        results.append(CheckResult(name, i, key, err, err < TOLERANCE))
    return results


def _signed(rng, shape, lo, hi):
    """Uniform magnitudes in ``[lo, hi]`` with random signs."""
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _pow_params(rng, shape):
    return rng.uniform(-0.5, 1.5, shape), rng.uniform(-0.5, 1.0, shape)


# --------------------------------------------------------------------------
# individual checks; each returns a list of CheckResult for one instance
# --------------------------------------------------------------------------

def check_psi(i, seed):
    """psi gradients w.r.t. x, alpha and beta (relative step in x)."""
    rng = substream(seed, "psi", i)
    x = np.exp(rng.uniform(np.log(MIN_ABS_INPUT), np.log(2.0), 12)) * rng.choice([-1.0, 1.0], 12)
    a, b = _pow_params(rng, 2)
    theta = {"x": x, "alpha": np.array([a[0]]), "beta": np.array([b[0]])}
    r = rng.standard_normal(12)

    def loss():
        return float(np.sum(r * powfn.psi(theta["x"], theta["alpha"][0], theta["beta"][0])))

    y = powfn.psi(x, a[0], b[0])
    gx, ga, gb = powfn.psi_backward(x, y, r, a[0], b[0])
    analytic = {"x": gx, "alpha": ga, "beta": gb}
    return _compare("psi", i, theta, analytic, loss, rng, None, relative=True)


def _powconv_instance(rng, mode, groups, split_sign):
    B, C, D, H, W = 2, 4, 4, 5, 5
    layer = L.PowConv2D(C, D, 3, 1, 1, mode=mode, groups=groups, split_sign=split_sign, rng=rng)
    if mode == "out":
        # same-sign windows keep every per-channel response away from zero
        t = rng.choice([-1.0, 1.0], (B, C, 1, 1))
        s = rng.choice([-1.0, 1.0], (C, D, 1, 1))
        x = t * rng.uniform(0.2, 1.5, (B, C, H, W))
        layer.params["weight"][...] = s * rng.uniform(0.2, 1.0, (C, D, 3, 3))
    else:
        x = _signed(rng, (B, C, H, W), 0.2, 1.5)
    a, b = _pow_params(rng, layer.params["alpha"].shape)
    layer.params["alpha"][...] = a
    layer.params["beta"][...] = b
    return layer, x


def check_powconv(mode, groups, i, seed, limit=6):
    name = f"powconv[{mode},L={groups}]"
    rng = substream(seed, name, i)
    layer, x = _powconv_instance(rng, mode, groups, split_sign=(i % 4 == 3))
    r = rng.standard_normal(layer.forward(x).shape)
    layer.zero_grad()
    gx = layer.backward(r)
    tensors = {"x": x, **{k: layer.params[k] for k in ("weight", "alpha", "beta")}}
    analytic = {"x": gx, **{k: layer.grads[k].copy() for k in ("weight", "alpha", "beta")}}

    def loss():
        return float(np.sum(r * layer.forward(tensors["x"])))

    return _compare(name, i, tensors, analytic, loss, rng, limit)


def _layer_check(name, i, seed, make):
    """Generic check for a layer built by ``make(rng) -> (layer, x)``."""
    rng = substream(seed, name, i)
    layer, x = make(rng)
    r = rng.standard_normal(layer.forward(x).shape)
    layer.zero_grad()
    gx = layer.backward(r)
    tensors = {"x": x, **layer.params}
    analytic = {"x": gx, **{k: layer.grads[k].copy() for k in layer.params}}

    def loss():
        return float(np.sum(r * layer.forward(tensors["x"])))

    return _compare(name, i, tensors, analytic, loss, rng, 8)


def _bn2d(rng):
    layer = L.BatchNorm(5)
    layer.params["gamma"][...] = rng.uniform(0.5, 1.5, 5)
    layer.params["beta"][...] = rng.standard_normal(5)
    return layer, rng.standard_normal((6, 5)) * 2 + 1


def _bn4d(rng):
    layer = L.BatchNorm(3)
    layer.params["gamma"][...] = rng.uniform(0.5, 1.5, 3)
    return layer, rng.standard_normal((2, 3, 3, 3))


def _linear(rng):
    return L.Linear(6, 4, rng), rng.standard_normal((5, 6))


def _activation(cls):
    return lambda rng: (cls(), _signed(rng, (4, 7), MIN_ABS_INPUT, 3.0))


def check_loss(head, i, seed):
    name = f"loss[{head}]"
    rng = substream(seed, name, i)
    pred = rng.standard_normal((5, 4))
    target = rng.integers(0, 4, 5) if head == "SoftmaxCrossEntropy" else rng.standard_normal((5, 4))
    fn = L.LOSSES[head]()
    fn.forward(pred, target)
    analytic = {"pred": fn.backward()}
    return _compare(name, i, {"pred": pred}, analytic,
                    lambda: float(L.LOSSES[head]().forward(pred, target)), rng, None)


def check_network(i, seed):
    """Directional derivative of a small powered network along a random direction."""
    name = "network"
    rng = substream(seed, name, i)
    mode = ("in", "out")[i % 2]
    conv, x = _powconv_instance(rng, mode, 2, split_sign=False)
    net = Sequential([conv, L.BatchNorm(4), L.Tanh(), L.Flatten(),
                      L.Linear(4 * 5 * 5, 3, rng, "lecun")], "SoftmaxCrossEntropy")
    y = rng.integers(0, 3, x.shape[0])
    for layer in net.layers:
        layer.zero_grad()
    net.loss_and_grads(x, y)
    params = [p for _, _, p in net.parameters()]
    grads = [layer.grads[k].copy() for layer in net.layers for k in layer.params]
    dirs = [rng.standard_normal(p.shape) for p in params]
    analytic = sum(float(np.sum(g * d)) for g, d in zip(grads, dirs))

    def shifted(h):
        for p, d in zip(params, dirs):
            p += h * d
        value = net.loss.forward(net.forward(x), y)
        for p, d in zip(params, dirs):
            p -= h * d
        return value

    numeric = (shifted(STEP) - shifted(-STEP)) / (2 * STEP)
    err = rel_error(np.array([analytic]), np.array([numeric]))
    return [CheckResult(name, i, "direction", err, err < TOLERANCE)]


def suite():
    """``(name, fn(i, seed))`` for every check in the suite."""
    checks = [("psi", check_psi)]
    for mode in ("in", "out"):
        for g in POW_GROUPS:
            checks.append((f"powconv[{mode},L={g}]",
                           lambda i, s, mode=mode, g=g: check_powconv(mode, g, i, s)))
    for name, make in (("batchnorm[2d]", _bn2d), ("batchnorm[4d]", _bn4d), ("linear", _linear),
                       ("relu", _activation(L.ReLU)), ("tanh", _activation(L.Tanh)),
                       ("softsign", _activation(L.Softsign))):
        checks.append((name, lambda i, s, name=name, make=make: _layer_check(name, i, s, make)))
    for head in ("SoftmaxCrossEntropy", "MeanSquaredError"):
        checks.append((f"loss[{head}]", lambda i, s, head=head: check_loss(head, i, s)))
    checks.append(("network", check_network))
    return checks


@dataclass
class GradcheckReport:
    results: list
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self):
        return [r for r in self.results if not r.passed]

    def instances(self, check: str) -> int:
        return len({r.instance for r in self.results if r.check == check})

    def worst(self) -> dict:
        out = {}
        for r in self.results:
            out[r.check] = max(out.get(r.check, 0.0), r.error)
        return out


def run_gradcheck(n_instances=100, seed=0, only=None) -> GradcheckReport:
    """Run the whole suite (or the checks named in ``only``)."""
    start = time.perf_counter()
    results = []
    for name, fn in suite():
        if only is not None and name not in only:
            continue
        for i in range(n_instances):
            results.extend(fn(i, seed))
    return GradcheckReport(results, time.perf_counter() - start)
