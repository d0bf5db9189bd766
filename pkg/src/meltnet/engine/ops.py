"""Differentiable operations on :class:`~meltnet.engine.tensor.Tensor`.

Only the layer kinds the surrogate networks are built from are provided:
fully connected, 3x3x3 same-padded convolution, x2 trilinear upsampling,
(valved) leaky ReLU, sigmoid, reshape, and three losses.
"""

from __future__ import annotations

import warnings

import numpy as np

from ..exceptions import DimensionError
from . import kernels
from .tensor import Tensor

BCE_EPS = 1e-7


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _make(data, parents, backward) -> Tensor:
    rg = _needs_grad(*parents)
    return Tensor(data, requires_grad=rg, _parents=parents if rg else (), _backward=backward if rg else None)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    out = kernels.fc_forward(x.data, weight.data, bias.data)

    def backward(g):
        return kernels.fc_backward(g, x.data, weight.data)

    return _make(out, (x, weight, bias), backward)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    out, padded = kernels.conv3d_forward(x.data, weight.data, bias.data)

    def backward(g):
        return kernels.conv3d_backward(g, padded, weight.data)

    return _make(out, (x, weight, bias), backward)


def upsample_trilinear(x: Tensor) -> Tensor:
    out = kernels.upsample_forward(x.data)
    return _make(out, (x,), lambda g: (kernels.upsample_backward(g),))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    out = kernels.leaky_relu(x.data, slope)
    return _make(out, (x,), lambda g: (g * kernels.leaky_relu_grad(x.data, slope),))


def valved_leaky_relu(x: Tensor, slope: float = 0.01, mode: str = "train") -> Tensor:
    """Leaky ReLU while training, plain ReLU at evaluation time."""
    if mode == "train":
        return leaky_relu(x, slope)
    if mode != "eval":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    out = np.maximum(x.data, x.data.dtype.type(0.0))
    return _make(out, (x,), lambda g: (g * (x.data > 0),))


def sigmoid(x: Tensor) -> Tensor:
    out = kernels.sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(src),))


def _same_shape(pred: Tensor, target: np.ndarray, what: str) -> None:
    if pred.shape != target.shape:
        for axis, (a, b) in enumerate(zip(pred.shape, target.shape)):
            if a != b:
                raise DimensionError(f"{what}: prediction and target differ on axis {axis} ({a} vs {b})")
        raise DimensionError(f"{what}: prediction shape {pred.shape} vs target shape {target.shape}")


def _as_array(t, like: Tensor) -> np.ndarray:
    arr = t.data if isinstance(t, Tensor) else t
    return np.asarray(arr, dtype=like.data.dtype)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = _as_array(target, pred)
    _same_shape(pred, target, "mse_loss")
    diff = pred.data - target
    n = diff.size
    out = np.array(np.dot(diff.ravel(), diff.ravel()) / n)
    return _make(out, (pred,), lambda g: (g * 2.0 * diff / n,))


def bce_loss(pred: Tensor, target, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [eps, 1 - eps]."""
    target = _as_array(target, pred)
    _same_shape(pred, target, "bce_loss")
    p = np.clip(pred.data, eps, 1.0 - eps)
    n = p.size
    out = np.array(-np.sum(target * np.log(p) + (1.0 - target) * np.log1p(-p)) / n)
    inside = (pred.data > eps) & (pred.data < 1.0 - eps)

    def backward(g):
        dp = (p - target) / (p * (1.0 - p)) / n
        return (g * dp * inside,)

    return _make(out, (pred,), backward)


def masked_mse_loss(pred: Tensor, target, ambient_mask) -> Tensor:
    """Squared error averaged only over voxels where ``ambient_mask`` is 0.

    The mean is taken per sample over that sample's unmasked voxels and then
    across samples. A sample whose mask covers every voxel contributes nothing
    and is skipped with a warning. Masked voxels receive exactly zero gradient.
    """
    target = _as_array(target, pred)
    mask = np.asarray(ambient_mask)
    _same_shape(pred, target, "masked_mse_loss")
    if mask.shape != target.shape:
        raise DimensionError(f"masked_mse_loss: mask shape {mask.shape} vs target shape {target.shape}")
    keep = mask == 0
    batch = pred.shape[0]
    counts = keep.reshape(batch, -1).sum(axis=1)
    used = counts > 0
    if not used.all():
        warnings.warn(
            f"{int((~used).sum())} sample(s) fully masked; they contribute no loss",
            RuntimeWarning,
            stacklevel=2,
        )
    n_used = int(used.sum())
    dtype = pred.data.dtype
    diff = np.where(keep, pred.data - target, dtype.type(0.0))
    if n_used == 0:
        return _make(np.array(0.0, dtype=dtype), (pred,), lambda g: (np.zeros_like(pred.data),))
    scale = np.zeros(batch, dtype=dtype)
    scale[used] = 1.0 / (counts[used] * n_used)
    scale = scale.reshape((batch,) + (1,) * (pred.data.ndim - 1))
    per_sample = (diff.reshape(batch, -1) ** 2).sum(axis=1)
    # integer counts would otherwise promote a float32 loss (and its gradient) to float64
    out = np.array(np.sum(per_sample[used] / counts[used].astype(dtype)) / dtype.type(n_used), dtype=dtype)
    return _make(out, (pred,), lambda g: (g * 2.0 * diff * scale,))
