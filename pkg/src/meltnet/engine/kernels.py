"""Array-level forward/backward kernels for the layer kinds the surrogates use.

Everything here works on plain ``numpy`` arrays laid out as
``(batch, channels, x, y, z)``. Outputs and gradients keep the input's
floating dtype (float64 normally, float32 for faster training). The autodiff wrappers in :mod:`.ops` call
these and keep the caches around for the backward pass.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import DimensionError


def _check_ndim(arr: np.ndarray, ndim: int, what: str) -> None:
    if arr.ndim != ndim:
        raise DimensionError(f"{what}: expected {ndim} axes, got shape {arr.shape}")


# -- fully connected ---------------------------------------------------------


def fc_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """out[b, j] = sum_i x[b, i] * weight[i, j] + bias[j]."""
    _check_ndim(x, 2, "fc input")
    _check_ndim(weight, 2, "fc weight")
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"fc: input axis 1 (in_features) is {x.shape[1]} but weight axis 0 is {weight.shape[0]}"
        )
    if bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"fc: bias axis 0 is {bias.shape} but weight axis 1 (out_features) is {weight.shape[1]}"
        )
    return x @ weight + bias


def fc_backward(grad: np.ndarray, x: np.ndarray, weight: np.ndarray):
    return grad @ weight.T, x.T @ grad, grad.sum(axis=0)


# -- 3x3x3 "same" convolution -------------------------------------------------
#
# The zero-padded input is stored channel-major as (Cin, B*(X+2)*(Y+2)*(Z+2)).
# In that flat layout a kernel tap (dx, dy, dz) is a constant index offset, so
# each tap is one GEMM against a strided view with no im2col copy. Outputs at
# padding positions are garbage and are dropped; the gradient fed back has
# zeros there so they never leak into dW or dx. Columns are processed in
# cache-sized blocks; every tap of a block is applied before moving on.

_CHUNK = 8192


def _tap_offsets(sx: int, sy: int) -> list[int]:
    return [dx * sx + dy * sy + dz for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]


def _pad_channel_major(x: np.ndarray) -> np.ndarray:
    b, c, nx, ny, nz = x.shape
    padded = np.zeros((c, b, nx + 2, ny + 2, nz + 2), dtype=x.dtype)
    padded[:, :, 1:-1, 1:-1, 1:-1] = x.transpose(1, 0, 2, 3, 4)
    return padded


def _conv_geometry(shape):
    b, _, nx, ny, nz = shape
    sy = nz + 2
    sx = (ny + 2) * sy
    total = b * (nx + 2) * sx
    base = sx + sy + 1
    return sx, sy, total, base, total - 2 * base


def conv3d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Cross-correlation with a 3x3x3 kernel, stride 1, zero padding of width 1.

    Returns ``(out, padded)``; ``padded`` is the cache the backward pass needs.
    """
    _check_ndim(x, 5, "conv3d input")
    _check_ndim(weight, 5, "conv3d kernel")
    if weight.shape[2:] != (3, 3, 3):
        raise DimensionError(f"conv3d: kernel spatial shape must be (3, 3, 3), got {weight.shape[2:]}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"conv3d: input channels (axis 1) = {x.shape[1]} but kernel expects {weight.shape[1]}"
        )
    cout = weight.shape[0]
    if bias.shape != (cout,):
        raise DimensionError(f"conv3d: bias shape {bias.shape} does not match out_channels {cout}")
    b, cin, nx, ny, nz = x.shape
    sx, sy, total, base, span = _conv_geometry(x.shape)

    padded = _pad_channel_major(x)
    flat = padded.reshape(cin, total)
    taps = np.ascontiguousarray(weight.reshape(cout, cin, 27).transpose(2, 0, 1))
    offsets = _tap_offsets(sx, sy)

    out = np.zeros((cout, total), dtype=x.dtype)
    tmp = np.empty((cout, _CHUNK), dtype=x.dtype)
    for start in range(base, base + span, _CHUNK):
        stop = min(start + _CHUNK, base + span)
        acc = out[:, start:stop]
        t = tmp[:, : stop - start]
        for k, off in enumerate(offsets):
            np.matmul(taps[k], flat[:, start + off : stop + off], out=t)
            acc += t
    out = out.reshape(cout, b, nx + 2, ny + 2, nz + 2)[:, :, 1:-1, 1:-1, 1:-1]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3, 4))
    out += bias[None, :, None, None, None]
    return out, padded


def conv3d_backward(grad: np.ndarray, padded: np.ndarray, weight: np.ndarray):
    """Gradients ``(dx, dweight, dbias)`` of :func:`conv3d_forward`."""
    b, cout, nx, ny, nz = grad.shape
    cin = weight.shape[1]
    sx, sy, total, base, span = _conv_geometry(grad.shape)

    gpad = _pad_channel_major(grad).reshape(cout, total)
    flat = padded.reshape(cin, total)
    taps_t = np.ascontiguousarray(weight.reshape(cout, cin, 27).transpose(2, 1, 0))

    offsets = _tap_offsets(sx, sy)
    dt = grad.dtype
    dweight = np.zeros((27, cout, cin), dtype=dt)
    dflat = np.zeros((cin, total), dtype=dt)
    tmp = np.empty((cin, _CHUNK), dtype=dt)
    dw_tmp = np.empty((cout, cin), dtype=dt)
    # a single output channel makes each tap an outer product; skip BLAS for it
    product = np.multiply if cout == 1 else np.matmul
    for start in range(base, base + span, _CHUNK):
        stop = min(start + _CHUNK, base + span)
        gc = gpad[:, start:stop]
        acc = dflat[:, start:stop]
        t = tmp[:, : stop - start]
        for k, off in enumerate(offsets):
            np.matmul(gc, flat[:, start + off : stop + off].T, out=dw_tmp)
            dweight[k] += dw_tmp
            # gather form of the input gradient: pull from the shifted window
            product(taps_t[k], gpad[:, start - off : stop - off], out=t)
            acc += t
    dx = dflat.reshape(cin, b, nx + 2, ny + 2, nz + 2)[:, :, 1:-1, 1:-1, 1:-1]
    dx = np.ascontiguousarray(dx.transpose(1, 0, 2, 3, 4))
    dweight = dweight.transpose(1, 2, 0).reshape(cout, cin, 3, 3, 3)
    return dx, np.ascontiguousarray(dweight), grad.sum(axis=(0, 2, 3, 4))


# -- trilinear x2 upsampling (half-pixel / align_corners=False) ----------------
#
# Along one axis, output 2k samples source position k - 1/4 and output 2k+1
# samples k + 1/4, with edge clamping. Trilinear = the 1D rule on each axis.


def _upsample_axis(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    prev = np.concatenate([a[:1], a[:-1]])
    nxt = np.concatenate([a[1:], a[-1:]])
    out = np.empty((2 * a.shape[0],) + a.shape[1:], dtype=a.dtype)
    out[0::2] = 0.75 * a + 0.25 * prev
    out[1::2] = 0.75 * a + 0.25 * nxt
    return np.moveaxis(out, 0, axis)


def _upsample_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, 0)
    even, odd = g[0::2], g[1::2]
    ga = 0.75 * (even + odd)
    ga[:-1] += 0.25 * even[1:]
    ga[0] += 0.25 * even[0]
    ga[1:] += 0.25 * odd[:-1]
    ga[-1] += 0.25 * odd[-1]
    return np.moveaxis(ga, 0, axis)


def upsample_forward(x: np.ndarray) -> np.ndarray:
    _check_ndim(x, 5, "upsample input")
    if min(x.shape[2:]) < 1:
        raise DimensionError(f"upsample: spatial axes must be >= 1, got {x.shape[2:]}")
    out = x
    for axis in (2, 3, 4):
        out = _upsample_axis(out, axis)
    return np.ascontiguousarray(out)


def upsample_backward(grad: np.ndarray) -> np.ndarray:
    g = grad
    for axis in (4, 3, 2):
        g = _upsample_axis_adjoint(g, axis)
    return np.ascontiguousarray(g)


# -- activations ----------------------------------------------------------------


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, x.dtype.type(1.0), x.dtype.type(slope))


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
