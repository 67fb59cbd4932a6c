"""Mirrored power function with learnable exponent and scale.

    psi(x, a, b) =  x**(a+1) / (b+1)        x >= 0
                 = -(-x)**(a+1) / (b+1)     x <  0

``a`` is the exponent offset and ``b`` the scale offset, so ``a = b = 0`` is
the identity.  Powers go through ``exp(a * ln|x|)`` with ``x = 0`` guarded;
the factorisation ``|x| * |x|**a`` keeps the identity case exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, DimensionError

EPS_ALPHA = 0.05
EPS_BETA = 1e-3
ALPHA_MAX = 3.0
ALPHA_MIN = -1.0 + EPS_ALPHA
BETA_MIN = -1.0 + EPS_BETA

# Closest representable values strictly inside the open lower bounds.
_ALPHA_FLOOR = float(np.nextafter(ALPHA_MIN, 0.0))
_BETA_FLOOR = float(np.nextafter(BETA_MIN, 0.0))


class Mode(str, Enum):
    IN_CHANNEL = "in"
    OUT_CHANNEL = "out"


def check_bounds(alpha, beta) -> None:
    alpha = np.asarray(alpha)
    beta = np.asarray(beta)
    if np.any(~np.isfinite(alpha)) or np.any(alpha <= ALPHA_MIN) or np.any(alpha > ALPHA_MAX):
        raise ConfigurationError(f"alpha must lie in ({ALPHA_MIN}, {ALPHA_MAX}]")
    if np.any(~np.isfinite(beta)) or np.any(beta <= BETA_MIN):
        raise ConfigurationError(f"beta must exceed {BETA_MIN}")


def clamp_(alpha: np.ndarray, beta: np.ndarray) -> None:
    """Project ``alpha`` and ``beta`` back into their valid ranges, in place."""
    np.clip(alpha, _ALPHA_FLOOR, ALPHA_MAX, out=alpha)
    np.maximum(beta, _BETA_FLOOR, out=beta)


def _log_abs(x):
    ax = np.abs(x)
    nz = ax > 0
    return np.log(np.where(nz, ax, 1.0)), nz


def psi(x, alpha, beta):
    """Element-wise psi; ``alpha`` and ``beta`` broadcast against ``x``."""
    x = np.asarray(x, dtype=np.float64)
    log_ax, nz = _log_abs(x)
    mag = np.where(nz, np.exp(alpha * log_ax), 0.0)
    return x * mag / (beta + 1.0)


def psi_grads(x, y, grad_y, alpha, beta):
    """Element-wise adjoints of psi.

    Returns ``(grad_x, grad_alpha, grad_beta)`` each broadcast to the shape of
    ``x``; callers sum the parameter terms over whatever axes share a
    parameter.  Zero inputs contribute zero to every gradient.
    """
    log_ax, nz = _log_abs(x)
    gy = grad_y * y
    grad_alpha = gy * log_ax
    grad_beta = -gy / (beta + 1.0)
    # (a+1) * g * y / x, written via |x|**a so it stays finite and exact at a = 0
    slope = np.where(nz, (alpha + 1.0) / (beta + 1.0) * np.exp(alpha * log_ax), 0.0)
    grad_x = grad_y * slope
    return grad_x, grad_alpha, grad_beta


def psi_forward(x, alpha: float, beta: float) -> np.ndarray:
    """psi with scalar parameters, validated against the parameter bounds."""
    check_bounds(alpha, beta)
    return psi(x, alpha, beta)


def psi_backward(x, y, grad_y, alpha: float, beta: float):
    """Backward pass for scalar ``(alpha, beta)``.

    Returns ``(grad_x, grad_alpha, grad_beta)`` with the parameter gradients
    summed over all elements.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    grad_y = np.asarray(grad_y, dtype=np.float64)
    if not (x.shape == y.shape == grad_y.shape):
        raise DimensionError(f"shape mismatch: x {x.shape}, y {y.shape}, grad_y {grad_y.shape}")
    gx, ga, gb = psi_grads(x, y, grad_y, alpha, beta)
    return gx, float(ga.sum()), float(gb.sum())


@dataclass
class PowParams:
    """Learnable ``(alpha, beta)`` slots of a powered layer.

    ``alpha`` and ``beta`` have shape ``slot_shape`` or, with ``split_sign``,
    ``(2, *slot_shape)`` where index 0 serves non-negative inputs and index 1
    negative ones.  For an in-channel layer ``slot_shape`` is ``(C, groups)``;
    for an out-channel layer it is ``(groups, D)``.
    """

    mode: Mode
    groups: int
    slot_shape: tuple
    split_sign: bool = False
    alpha: np.ndarray = field(default=None)
    beta: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.groups < 1:
            raise ConfigurationError(f"groups must be >= 1, got {self.groups}")
        shape = ((2,) if self.split_sign else ()) + tuple(self.slot_shape)
        if self.alpha is None:
            self.alpha = np.zeros(shape)
        if self.beta is None:
            self.beta = np.zeros(shape)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.alpha.shape != shape or self.beta.shape != shape:
            raise DimensionError(
                f"alpha/beta shapes {self.alpha.shape}/{self.beta.shape} != {shape}")
        check_bounds(self.alpha, self.beta)

    @classmethod
    def for_layer(cls, mode, groups: int, in_channels: int, out_channels: int,
                  split_sign: bool = False) -> "PowParams":
        mode = Mode(mode)
        split = out_channels if mode is Mode.IN_CHANNEL else in_channels
        if split % groups:
            raise ConfigurationError(f"groups={groups} does not divide {split} channels")
        shape = (in_channels, groups) if mode is Mode.IN_CHANNEL else (groups, out_channels)
        return cls(mode, groups, shape, split_sign)

    @property
    def n_pairs(self) -> int:
        return int(self.alpha.size)

    def clamp_(self) -> None:
        clamp_(self.alpha, self.beta)
