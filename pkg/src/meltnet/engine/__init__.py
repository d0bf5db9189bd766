"""Small deterministic tensor/autodiff engine (float64, optionally float32).

Provides exactly what the melt pool surrogates need: fully connected and
3x3x3 convolution layers, x2 trilinear upsampling, (valved) leaky ReLU,
sigmoid, MSE / BCE / masked MSE losses, Adam, and a plateau scheduler.
"""

from .checkpoint import Checkpoint
from .gradcheck import max_relative_error, numerical_gradient
from .network import (
    Conv3D,
    FullyConnected,
    LeakyReLU,
    Network,
    NetworkSpec,
    Reshape,
    Sigmoid,
    TrilinearUpsample,
    ValvedLeakyReLU,
    init_parameters,
)
from .ops import (
    bce_loss,
    conv3d,
    leaky_relu,
    linear,
    masked_mse_loss,
    mse_loss,
    reshape,
    sigmoid,
    upsample_trilinear,
    valved_leaky_relu,
)
from .optim import Adam, OptimizerState, ReduceOnPlateau, SchedulerState
from .tensor import Tensor

__all__ = [
    "Adam",
    "Checkpoint",
    "Conv3D",
    "FullyConnected",
    "LeakyReLU",
    "Network",
    "NetworkSpec",
    "OptimizerState",
    "ReduceOnPlateau",
    "Reshape",
    "SchedulerState",
    "Sigmoid",
    "Tensor",
    "TrilinearUpsample",
    "ValvedLeakyReLU",
    "bce_loss",
    "conv3d",
    "init_parameters",
    "max_relative_error",
    "numerical_gradient",
    "leaky_relu",
    "linear",
    "masked_mse_loss",
    "mse_loss",
    "reshape",
    "sigmoid",
    "upsample_trilinear",
    "valved_leaky_relu",
]
