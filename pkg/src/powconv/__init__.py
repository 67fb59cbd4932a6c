"""Powered convolution: convolution fused with a learnable mirrored power function.

Plain numpy layers with explicit forward/backward passes, an SGD optimizer
with the power-parameter stabilisers, synthetic data generators, an image
deformation catalogue and the experiment harness behind the ``powconv``
command.
"""

from .errors import ConfigurationError, DataError, DimensionError, PowConvError
from .layers import (BatchNorm, Conv2D, Flatten, Linear, MaxPool2D, Power, PowConv2D,
                     ReLU, Softsign, Tanh)
from .network import Sequential, fit, load_checkpoint, save_checkpoint
from .optim import SGD, OptimConfig
from .powfn import Mode, PowParams, psi, psi_backward, psi_forward
from .tensor import ConvKernel, conv2d, conv2d_backward, read_tensor, write_tensor

__all__ = [
    "BatchNorm", "ConfigurationError", "Conv2D", "ConvKernel", "DataError", "DimensionError",
    "Flatten", "Linear", "MaxPool2D", "Mode", "OptimConfig", "Power", "PowConv2D", "PowConvError",
    "PowParams", "ReLU", "SGD", "Sequential", "Softsign", "Tanh", "conv2d", "conv2d_backward",
    "fit", "load_checkpoint", "psi", "psi_backward", "psi_forward", "read_tensor",
    "save_checkpoint", "write_tensor",
]
