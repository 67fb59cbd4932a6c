"""SGD with Nesterov momentum plus the stabilisers for power parameters.

Power parameters (``alpha``/``beta``) get an l2 pull towards zero (beta may
use its own coefficient), and the exponent gradient is attenuated by
``cos(pi * alpha / 2)`` once ``|alpha|`` passes a threshold.  The multiplier is clamped to ``[floor, 1]`` so the
update is slowed but never reversed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import powfn
from .errors import ConfigurationError, DimensionError


@dataclass
class OptimConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 5e-4
    pow_l2: float = 1e-4
    pow_l2_beta: float | None = None  # separate pull on beta; None means pow_l2
    cos_shrink_threshold: float = 0.5
    cos_shrink_floor: float = 0.01
    freeze_pow: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0 or self.pow_l2 < 0 or self.cos_shrink_threshold < 0:
            raise ConfigurationError("weight_decay, pow_l2 and cos_shrink_threshold must be >= 0")
        if self.pow_l2_beta is not None and self.pow_l2_beta < 0:
            raise ConfigurationError(f"pow_l2_beta must be >= 0, got {self.pow_l2_beta}")
        if not 0 < self.cos_shrink_floor <= 1:
            raise ConfigurationError(f"cos_shrink_floor must be in (0, 1], got {self.cos_shrink_floor}")

    @classmethod
    def from_mapping(cls, values: dict) -> "OptimConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigurationError(f"unknown optimizer option {key!r}")
            if known[key] in ("bool", bool):
                kwargs[key] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes", "on")
            else:
                kwargs[key] = float(raw)
        return cls(**kwargs)


def shrink_multiplier(alpha, threshold: float, floor: float):
    """Per-slot attenuation factor for the exponent gradient."""
    alpha = np.asarray(alpha, dtype=np.float64)
    mult = np.clip(np.cos(math.pi * alpha / 2.0), floor, 1.0)
    return np.where(np.abs(alpha) > threshold, mult, 1.0)


def pow_param_update(grad_alpha, grad_beta, alpha, beta, config: OptimConfig):
    """Add the l2 term to both power gradients, then attenuate the exponent one."""
    grad_alpha = np.asarray(grad_alpha, dtype=np.float64) + config.pow_l2 * alpha
    l2_beta = config.pow_l2 if config.pow_l2_beta is None else config.pow_l2_beta
    grad_beta = np.asarray(grad_beta, dtype=np.float64) + l2_beta * beta
    grad_alpha = grad_alpha * shrink_multiplier(alpha, config.cos_shrink_threshold,
                                                config.cos_shrink_floor)
    return grad_alpha, grad_beta


def sgd_nesterov_step(params, grads, velocity, config: OptimConfig) -> None:
    """In-place update of matching lists of arrays.

    ``v <- mu*v - lr*g`` then ``theta <- theta + mu*v - lr*g`` (Nesterov) or
    ``theta <- theta + v`` (classical momentum).
    """
    if not len(params) == len(grads) == len(velocity):
        raise DimensionError("params, grads and velocity must have the same length")
    lr, mu = config.learning_rate, config.momentum
    for p, g, v in zip(params, grads, velocity):
        if not p.shape == g.shape == v.shape:
            raise DimensionError(f"shape mismatch: {p.shape}, {g.shape}, {v.shape}")
        v *= mu
        v -= lr * g
        if config.nesterov:
            p += mu * v - lr * g
        else:
            p += v


class SGD:
    """Optimizer bound to a network's parameters.

    Walks ``net.layers`` each step, applies weight decay to ``weight``
    parameters, the power-parameter adjustments to ``alpha``/``beta`` pairs,
    and re-clamps power parameters into bounds after the update.
    """

    def __init__(self, net, config: OptimConfig | None = None):
        self.net = net
        self.config = config or OptimConfig()
        self.velocity: dict[tuple[int, str], np.ndarray] = {}

    def step(self):
        cfg = self.config
        params, grads, vels = [], [], []
        for i, layer in enumerate(self.net.layers):
            kinds = layer.kinds
            adjusted = {}
            if "alpha" in layer.params:
                if cfg.freeze_pow:
                    adjusted["alpha"] = adjusted["beta"] = None
                else:
                    adjusted["alpha"], adjusted["beta"] = pow_param_update(
                        layer.grads["alpha"], layer.grads["beta"],
                        layer.params["alpha"], layer.params["beta"], cfg)
            for name, p in layer.params.items():
                if name in adjusted:
                    g = adjusted[name]
                    if g is None:
                        continue
                else:
                    g = layer.grads[name]
                    if kinds[name] == "weight" and cfg.weight_decay:
                        g = g + cfg.weight_decay * p
                key = (i, name)
                if key not in self.velocity:
                    self.velocity[key] = np.zeros_like(p)
                params.append(p)
                grads.append(g)
                vels.append(self.velocity[key])
        sgd_nesterov_step(params, grads, vels, cfg)
        for layer in self.net.layers:
            if "alpha" in layer.params:
                powfn.clamp_(layer.params["alpha"], layer.params["beta"])
