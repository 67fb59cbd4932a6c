"""Network layers with explicit forward/backward passes.

Every layer keeps its learnable arrays in ``params`` and, after ``backward``,
the matching gradients in ``grads``.  ``kinds`` tags each parameter so the
optimizer knows which regulariser applies (``weight``, ``bias``, ``alpha``,
``beta`` or ``norm``).  Layers cache what they need between ``forward`` and
``backward``; they never modify their inputs.
"""

from __future__ import annotations

import numpy as np

from . import powfn
from .errors import ConfigurationError, DataError, DimensionError
from .powfn import Mode, PowParams
from .tensor import (ConvKernel, col2im, conv2d, conv2d_backward, im2col,
                     maxpool2d, maxpool2d_backward)

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _init_weights(rng, shape, fan_in, init="he"):
    if init == "he":
        std = np.sqrt(2.0 / fan_in)
    elif init == "lecun":
        std = np.sqrt(1.0 / fan_in)
    elif init == "zeros":
        return np.zeros(shape)
    else:
        raise ConfigurationError(f"unknown init {init!r}")
    rng = rng if rng is not None else np.random.default_rng()
    return rng.standard_normal(shape) * std


class Layer:
    """Base class; stateless layers only override forward/backward."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.kinds: dict[str, str] = {}

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def config(self) -> dict:
        return {}

    def zero_grad(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def __repr__(self):
        cfg = " ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({cfg})"


# --------------------------------------------------------------------------
# dense and convolution layers
# --------------------------------------------------------------------------

class Linear(Layer):
    """``y = x @ W + b`` on ``[batch, in]`` inputs."""

    def __init__(self, n_in, n_out, rng=None, init="he"):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params["weight"] = _init_weights(rng, (n_in, n_out), n_in, init)
        self.params["bias"] = np.zeros(n_out)
        self.kinds.update(weight="weight", bias="bias")

    def forward(self, x, train=True):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"Linear expects [batch, {self.n_in}], got {x.shape}")
        self.x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, grad):
        self.grads["weight"] = self.x.T @ grad
        self.grads["bias"] = grad.sum(axis=0)
        return grad @ self.params["weight"].T

    def config(self):
        return {"in": self.n_in, "out": self.n_out}


class Conv2D(Layer):
    """Plain convolution; weights are ``[C, D, k, k]``, no bias by default."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=1,
                 rng=None, bias=False):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        fan_in = in_channels * kernel_size ** 2
        self.params["weight"] = _init_weights(
            rng, (in_channels, out_channels, kernel_size, kernel_size), fan_in)
        self.kinds["weight"] = "weight"
        self.use_bias = bias
        if bias:
            self.params["bias"] = np.zeros(out_channels)
            self.kinds["bias"] = "bias"
        # validates stride/padding up front
        self.kernel

    @property
    def kernel(self) -> ConvKernel:
        return ConvKernel(self.params["weight"], self.stride, self.padding)

    def forward(self, x, train=True):
        self.x = x
        out = conv2d(x, self.kernel)
        if self.use_bias:
            out = out + self.params["bias"][:, None, None]
        return out

    def backward(self, grad):
        gx, gw = conv2d_backward(self.x, self.kernel, grad)
        self.grads["weight"] = gw
        if self.use_bias:
            self.grads["bias"] = grad.sum(axis=(0, 2, 3))
        return gx

    def config(self):
        return {"in": self.in_channels, "out": self.out_channels, "k": self.kernel_size,
                "stride": self.stride, "pad": self.padding, "bias": int(self.use_bias)}


class PowConv2D(Conv2D):
    """Convolution fused with the learnable power function.

    ``mode="in"``:  ``U_d = sum_c W[c,d] * psi(T_c; a[c, g(d)], b[c, g(d)])``
    where the D output channels are cut into ``groups`` contiguous blocks.

    ``mode="out"``: ``U_d = sum_c psi(W[c,d] * T_c; a[g(c), d], b[g(c), d])``
    with the C input channels cut into ``groups`` contiguous blocks.

    ``nonneg_input`` declares that inputs are non-negative (e.g. the layer
    follows a ReLU); in-channel mode then treats negative values as zero
    instead of sending them through the mirrored branch.  Out-channel mode
    ignores the flag since its psi acts on signed convolution responses.
    ``batch_chunk`` bounds the memory of the out-channel mode, which
    materialises every per-channel response.
    """

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=1,
                 mode="in", groups=1, split_sign=False, nonneg_input=False, rng=None,
                 batch_chunk=16):
        super().__init__(in_channels, out_channels, kernel_size, stride, padding, rng)
        self.pow = PowParams.for_layer(mode, groups, in_channels, out_channels, split_sign)
        self.params["alpha"] = self.pow.alpha
        self.params["beta"] = self.pow.beta
        self.kinds.update(alpha="alpha", beta="beta")
        self.nonneg_input = nonneg_input
        self.batch_chunk = batch_chunk

    @property
    def mode(self) -> Mode:
        return self.pow.mode

    @property
    def groups(self) -> int:
        return self.pow.groups

    def config(self):
        cfg = super().config()
        del cfg["bias"]
        cfg.update(mode=self.mode.value, groups=self.groups,
                   split=int(self.pow.split_sign), nonneg=int(self.nonneg_input))
        return cfg

    def group_of(self, channel: int) -> int:
        """Slot group of an output (in-mode) or input (out-mode) channel."""
        n = self.out_channels if self.mode is Mode.IN_CHANNEL else self.in_channels
        return channel // (n // self.groups)

    # -- parameter broadcasting -------------------------------------------------

    def _reduce_slot_grads(self, x, ga, gb, axes):
        if not self.pow.split_sign:
            return ga.sum(axis=axes), gb.sum(axis=axes)
        pos = x >= 0
        return (np.stack([np.where(pos, ga, 0).sum(axis=axes), np.where(pos, 0, ga).sum(axis=axes)]),
                np.stack([np.where(pos, gb, 0).sum(axis=axes), np.where(pos, 0, gb).sum(axis=axes)]))

    def _prep_input(self, x):
        return np.maximum(x, 0.0) if self.nonneg_input else x

    def _group_kernel(self, lam):
        size = self.out_channels // self.groups
        sl = slice(lam * size, (lam + 1) * size)
        return sl, ConvKernel(self.params["weight"][:, sl], self.stride, self.padding)

    # -- forward / backward -----------------------------------------------------

    def forward(self, x, train=True):
        single = x.ndim == 3
        xb = x[None] if single else x
        if xb.ndim != 4 or xb.shape[1] != self.in_channels:
            raise DimensionError(f"expected [B, {self.in_channels}, H, W], got {x.shape}")
        self.x = xb
        if self.mode is Mode.IN_CHANNEL:
            out = self._forward_in(xb)
        else:
            out = np.concatenate([self._forward_out(xb[i:i + self.batch_chunk])
                                  for i in range(0, len(xb), self.batch_chunk)])
        return out[0] if single else out

    def backward(self, grad):
        single = grad.ndim == 3
        gb = grad[None] if single else grad
        if self.mode is Mode.IN_CHANNEL:
            gx = self._backward_in(self.x, gb)
        else:
            self.zero_grad()
            parts = [self._backward_out(self.x[i:i + self.batch_chunk], gb[i:i + self.batch_chunk])
                     for i in range(0, len(self.x), self.batch_chunk)]
            gx = np.concatenate(parts)
        return gx[0] if single else gx

    def _psi_in(self, xin, lam):
        # slots [C, groups] (or [2, C, groups]) -> broadcast over [B, C, H, W]
        a = self.params["alpha"][..., lam][..., None, :, None, None]
        b = self.params["beta"][..., lam][..., None, :, None, None]
        if self.pow.split_sign:
            pos = xin >= 0
            a, b = np.where(pos, a[0], a[1]), np.where(pos, b[0], b[1])
        return powfn.psi(xin, a, b), a, b

    def _forward_in(self, x):
        xin = self._prep_input(x)
        Ho, Wo = self.kernel.output_size(x.shape[2], x.shape[3])
        out = np.empty((x.shape[0], self.out_channels, Ho, Wo))
        for lam in range(self.groups):
            sl, kern = self._group_kernel(lam)
            p, _, _ = self._psi_in(xin, lam)
            out[:, sl] = conv2d(p, kern)
        return out

    def _backward_in(self, x, grad):
        xin = self._prep_input(x)
        gx = np.zeros_like(x)
        gw = np.zeros_like(self.params["weight"])
        ga = np.zeros_like(self.params["alpha"])
        gbeta = np.zeros_like(self.params["beta"])
        for lam in range(self.groups):
            sl, kern = self._group_kernel(lam)
            p, a, b = self._psi_in(xin, lam)
            gp, gw[:, sl] = conv2d_backward(p, kern, grad[:, sl])
            gx_l, ga_e, gb_e = powfn.psi_grads(xin, p, gp, a, b)
            gx += gx_l
            ra, rb = self._reduce_slot_grads(xin, ga_e, gb_e, (0, 2, 3))
            ga[..., lam] = ra
            gbeta[..., lam] = rb
        if self.nonneg_input:
            gx *= x > 0
        self.grads.update(weight=gw, alpha=ga, beta=gbeta)
        return gx

    def _expanded_slots(self, v):
        # slot arrays are [groups, D]; expand to [C, D] then broadcast over [B, C, D, H, W]
        rep = self.in_channels // self.groups
        a = self.params["alpha"]
        b = self.params["beta"]
        axis = a.ndim - 2
        a = np.repeat(a, rep, axis=axis)[..., None, None]
        b = np.repeat(b, rep, axis=axis)[..., None, None]
        if not self.pow.split_sign:
            return a, b
        pos = v >= 0
        return np.where(pos, a[0], a[1]), np.where(pos, b[0], b[1])

    def _per_channel_conv(self, x):
        cols = im2col(x, self.kernel)
        B, C, Ho, Wo, h, w = cols.shape
        # [C, B*Ho*Wo, h*w] @ [C, h*w, D] -> [C, B*Ho*Wo, D]
        c2 = cols.transpose(1, 0, 2, 3, 4, 5).reshape(C, B * Ho * Wo, h * w)
        w2 = self.params["weight"].reshape(C, self.out_channels, h * w).transpose(0, 2, 1)
        v = np.matmul(c2, w2).reshape(C, B, Ho, Wo, self.out_channels)
        return v.transpose(1, 0, 4, 2, 3), c2  # v: [B, C, D, Ho, Wo]

    def _forward_out(self, x):
        v, _ = self._per_channel_conv(x)
        a, b = self._expanded_slots(v)
        return powfn.psi(v, a, b).sum(axis=1)

    def _backward_out(self, x, grad):
        v, c2 = self._per_channel_conv(x)
        a, b = self._expanded_slots(v)
        y = powfn.psi(v, a, b)
        gv, ga_e, gb_e = powfn.psi_grads(v, y, grad[:, None], a, b)
        ra, rb = self._reduce_slot_grads(v, ga_e, gb_e, (0, 3, 4))  # -> [..., C, D]
        rep = self.in_channels // self.groups
        lead = ra.shape[:-2]
        ra = ra.reshape(*lead, self.groups, rep, self.out_channels).sum(axis=-2)
        rb = rb.reshape(*lead, self.groups, rep, self.out_channels).sum(axis=-2)
        B, C, D, Ho, Wo = gv.shape
        h = w = self.kernel_size
        g2 = gv.transpose(1, 0, 3, 4, 2).reshape(C, B * Ho * Wo, D)
        # weight grad: [C, h*w, BP] @ [C, BP, D] -> [C, h*w, D]
        gw = np.matmul(c2.transpose(0, 2, 1), g2).transpose(0, 2, 1).reshape(C, D, h, w)
        w2 = self.params["weight"].reshape(C, D, h * w)
        gcols = np.matmul(g2, w2).reshape(C, B, Ho, Wo, h, w).transpose(1, 0, 2, 3, 4, 5)
        gx = col2im(gcols, self.kernel, x.shape[2], x.shape[3])
        self.grads["weight"] += gw
        self.grads["alpha"] += ra
        self.grads["beta"] += rb
        return gx


class Power(Layer):
    """Element-wise psi on ``[batch, features]`` with shared or per-feature slots."""

    def __init__(self, features=1, split_sign=False):
        super().__init__()
        self.features = features
        self.split_sign = split_sign
        shape = ((2,) if split_sign else ()) + (features,)
        self.params["alpha"] = np.zeros(shape)
        self.params["beta"] = np.zeros(shape)
        self.kinds.update(alpha="alpha", beta="beta")

    def _slots(self, x):
        a, b = self.params["alpha"], self.params["beta"]
        if not self.split_sign:
            return a, b
        pos = x >= 0
        return np.where(pos, a[0], a[1]), np.where(pos, b[0], b[1])

    def forward(self, x, train=True):
        if self.features != 1 and x.shape[-1] != self.features:
            raise DimensionError(f"Power expects {self.features} features, got {x.shape[-1]}")
        self.x = x
        a, b = self._slots(x)
        self.y = powfn.psi(x, a, b)
        return self.y

    def backward(self, grad):
        a, b = self._slots(self.x)
        gx, ga, gb = powfn.psi_grads(self.x, self.y, grad, a, b)
        axes = (0,) if self.features != 1 else None
        if self.split_sign:
            pos = self.x >= 0
            ga = np.stack([np.where(pos, ga, 0).sum(axis=axes), np.where(pos, 0, ga).sum(axis=axes)])
            gb = np.stack([np.where(pos, gb, 0).sum(axis=axes), np.where(pos, 0, gb).sum(axis=axes)])
        else:
            ga, gb = ga.sum(axis=axes), gb.sum(axis=axes)
        self.grads["alpha"] = np.reshape(ga, self.params["alpha"].shape)
        self.grads["beta"] = np.reshape(gb, self.params["beta"].shape)
        return gx

    def config(self):
        return {"features": self.features, "split": int(self.split_sign)}


# --------------------------------------------------------------------------
# normalisation, activations, reshaping
# --------------------------------------------------------------------------

class BatchNorm(Layer):
    """Batch normalisation over ``[B, F]`` (per feature) or ``[B, C, H, W]`` (per channel)."""

    def __init__(self, features, affine=True, momentum=BN_MOMENTUM, eps=BN_EPS):
        super().__init__()
        self.features, self.affine = features, affine
        self.momentum, self.eps = momentum, eps
        if affine:
            self.params["gamma"] = np.ones(features)
            self.params["beta"] = np.zeros(features)
            self.kinds.update(gamma="norm", beta="norm")
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)

    def _axes(self, x):
        if x.ndim == 2:
            return (0,), (slice(None),)
        if x.ndim == 4:
            return (0, 2, 3), (slice(None), None, None)
        raise DimensionError(f"BatchNorm expects 2-D or 4-D input, got {x.shape}")

    def forward(self, x, train=True):
        axes, bcast = self._axes(x)
        if x.shape[1] != self.features:
            raise DimensionError(f"BatchNorm expects {self.features} features, got {x.shape[1]}")
        if train:
            n = x.size // x.shape[1]
            if x.shape[0] < 2:
                raise ConfigurationError("batch norm in train mode needs a batch of at least 2")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mean
            self.running_var = m * self.running_var + (1 - m) * var
        else:
            mean, var, n = self.running_mean, self.running_var, None
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[bcast]) * inv_std[bcast]
        self.cache = (xhat, inv_std, axes, bcast, n)
        if self.affine:
            return self.params["gamma"][bcast] * xhat + self.params["beta"][bcast]
        return xhat

    def backward(self, grad):
        xhat, inv_std, axes, bcast, n = self.cache
        if self.affine:
            self.grads["gamma"] = (grad * xhat).sum(axis=axes)
            self.grads["beta"] = grad.sum(axis=axes)
            grad = grad * self.params["gamma"][bcast]
        if n is None:  # eval mode: fixed affine map
            return grad * inv_std[bcast]
        s1 = grad.sum(axis=axes)[bcast]
        s2 = (grad * xhat).sum(axis=axes)[bcast]
        return inv_std[bcast] * (grad - s1 / n - xhat * s2 / n)

    def config(self):
        return {"features": self.features, "affine": int(self.affine)}


class ReLU(Layer):
    def forward(self, x, train=True):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return grad * self.mask


class Tanh(Layer):
    def forward(self, x, train=True):
        self.y = np.tanh(x)
        return self.y

    def backward(self, grad):
        return grad * (1.0 - self.y ** 2)


class Softsign(Layer):
    def forward(self, x, train=True):
        self.x = x
        return x / (1.0 + np.abs(x))

    def backward(self, grad):
        return grad / (1.0 + np.abs(self.x)) ** 2


class MaxPool2D(Layer):
    def forward(self, x, train=True):
        out, self.index = maxpool2d(x)
        return out

    def backward(self, grad):
        return maxpool2d_backward(grad, self.index)


class Flatten(Layer):
    def forward(self, x, train=True):
        self.shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self.shape)


def activation_forward(kind: str, x):
    """Functional form of the fixed activations; returns ``(y, backward_fn)``."""
    layer = {"relu": ReLU, "tanh": Tanh, "softsign": Softsign}[kind.lower()]()
    y = layer.forward(np.asarray(x, dtype=np.float64))
    return y, layer.backward


# --------------------------------------------------------------------------
# loss heads
# --------------------------------------------------------------------------

class SoftmaxCrossEntropy:
    """Mean over the batch of ``-log softmax(logits)[label]``."""

    name = "SoftmaxCrossEntropy"

    def forward(self, logits, labels):
        labels = np.asarray(labels)
        if logits.ndim != 2 or labels.shape != (logits.shape[0],):
            raise DimensionError(f"logits {logits.shape} and labels {labels.shape} disagree")
        k = logits.shape[1]
        if labels.size and (labels.min() < 0 or labels.max() >= k or
                            not np.issubdtype(labels.dtype, np.integer)):
            raise DataError(f"labels must be integers in [0, {k})")
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        self.probs = np.exp(logp)
        self.labels = labels
        return float(-logp[np.arange(len(labels)), labels].mean())

    def backward(self):
        g = self.probs.copy()
        g[np.arange(len(self.labels)), self.labels] -= 1.0
        return g / len(self.labels)


class MeanSquaredError:
    """Mean over all elements of the squared difference."""

    name = "MeanSquaredError"

    def forward(self, pred, target):
        target = np.asarray(target, dtype=np.float64)
        if pred.shape != target.shape:
            raise DimensionError(f"prediction {pred.shape} and target {target.shape} disagree")
        self.diff = pred - target
        return float(np.mean(self.diff ** 2))

    def backward(self):
        return 2.0 * self.diff / self.diff.size


LOSSES = {cls.name: cls for cls in (SoftmaxCrossEntropy, MeanSquaredError)}


def loss_forward(head: str, predictions, targets):
    """Functional loss; returns ``(loss, grad_predictions)``."""
    loss = LOSSES[head]()
    value = loss.forward(np.asarray(predictions, dtype=np.float64), targets)
    return value, loss.backward()
