"""Declarative layer stacks and the runner that executes them."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

from ..exceptions import ConfigurationError, DimensionError
from . import ops
from .tensor import Tensor, as_float


@dataclass(frozen=True)
class FullyConnected:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv3D:
    """3x3x3 kernel, stride 1, same padding. Those three are not configurable."""

    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: str = "same"

    def __post_init__(self):
        if (self.kernel, self.stride, self.padding) != (3, 1, "same"):
            raise ConfigurationError("Conv3D is fixed to kernel=3, stride=1, padding='same'")


@dataclass(frozen=True)
class TrilinearUpsample:
    scale: int = 2

    def __post_init__(self):
        if self.scale != 2:
            raise ConfigurationError("TrilinearUpsample is fixed to scale=2")


@dataclass(frozen=True)
class LeakyReLU:
    slope: float = 0.01


@dataclass(frozen=True)
class ValvedLeakyReLU:
    slope: float = 0.01


@dataclass(frozen=True)
class Sigmoid:
    pass


@dataclass(frozen=True)
class Reshape:
    target_shape: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "target_shape", tuple(int(s) for s in self.target_shape))


LayerSpec = Union[FullyConnected, Conv3D, TrilinearUpsample, LeakyReLU, ValvedLeakyReLU, Sigmoid, Reshape]

_KINDS = {cls.__name__: cls for cls in (FullyConnected, Conv3D, TrilinearUpsample, LeakyReLU, ValvedLeakyReLU, Sigmoid, Reshape)}


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]

    def to_dict(self) -> dict:
        out = []
        for layer in self.layers:
            d = asdict(layer)
            if isinstance(layer, Reshape):
                d["target_shape"] = list(layer.target_shape)
            out.append({"kind": type(layer).__name__, **d})
        return {"layers": out}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        layers = []
        for entry in d["layers"]:
            entry = dict(entry)
            kind = entry.pop("kind")
            if kind not in _KINDS:
                raise ConfigurationError(f"unknown layer kind {kind!r}")
            layers.append(_KINDS[kind](**entry))
        return cls(tuple(layers))

    def parameter_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """(name, shape) for every parameter, weights before biases, in layer order."""
        shapes = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, FullyConnected):
                shapes.append((f"{i}.fc.weight", (layer.in_features, layer.out_features)))
                shapes.append((f"{i}.fc.bias", (layer.out_features,)))
            elif isinstance(layer, Conv3D):
                shapes.append((f"{i}.conv.weight", (layer.out_channels, layer.in_channels, 3, 3, 3)))
                shapes.append((f"{i}.conv.bias", (layer.out_channels,)))
        return shapes

    def parameter_count(self) -> int:
        return int(sum(np.prod(s) for _, s in self.parameter_shapes()))


def _fan_in(shape: tuple[int, ...]) -> int:
    if len(shape) == 2:
        return shape[0]
    return int(np.prod(shape[1:]))


def init_parameters(spec: NetworkSpec, seed: int) -> list[np.ndarray]:
    """He-normal weights (stdev sqrt(2 / fan_in)) and zero biases.

    Draws come from one ``numpy.random.Generator`` seeded with ``seed``, in
    parameter order, so the result is bitwise reproducible.
    """
    rng = np.random.default_rng(seed)
    params = []
    for name, shape in spec.parameter_shapes():
        if name.endswith(".bias"):
            params.append(np.zeros(shape))
        else:
            params.append(rng.normal(0.0, np.sqrt(2.0 / _fan_in(shape)), size=shape))
    return params


class Network:
    """Runs a :class:`NetworkSpec` forward with its parameter tensors.

    ``mode`` selects the valved activation's behaviour ("train" leaks,
    "eval" clamps); every other layer ignores it.
    """

    def __init__(self, spec: NetworkSpec, params: Sequence[np.ndarray] | None = None, seed: int = 0, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.float32, np.float64):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype}")
        if params is None:
            params = init_parameters(spec, seed)
        shapes = spec.parameter_shapes()
        if len(params) != len(shapes):
            raise ConfigurationError(f"expected {len(shapes)} parameter arrays, got {len(params)}")
        self.params: list[Tensor] = []
        for (name, shape), arr in zip(shapes, params):
            arr = np.array(arr, dtype=self.dtype)
            if arr.shape != shape:
                raise DimensionError(f"parameter {name}: expected shape {shape}, got {arr.shape}")
            self.params.append(Tensor(arr, requires_grad=True, name=name))

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for p in self.params:
            yield p.name, p

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def parameter_arrays(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params]

    def forward(self, x, mode: str = "train") -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(as_float(x, self.dtype))
        it = iter(self.params)
        for layer in self.spec.layers:
            if isinstance(layer, FullyConnected):
                x = ops.linear(x, next(it), next(it))
            elif isinstance(layer, Conv3D):
                x = ops.conv3d(x, next(it), next(it))
            elif isinstance(layer, TrilinearUpsample):
                x = ops.upsample_trilinear(x)
            elif isinstance(layer, LeakyReLU):
                x = ops.leaky_relu(x, layer.slope)
            elif isinstance(layer, ValvedLeakyReLU):
                x = ops.valved_leaky_relu(x, layer.slope, mode)
            elif isinstance(layer, Sigmoid):
                x = ops.sigmoid(x)
            elif isinstance(layer, Reshape):
                x = ops.reshape(x, (x.shape[0],) + layer.target_shape)
        return x

    __call__ = forward
