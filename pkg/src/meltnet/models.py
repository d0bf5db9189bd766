"""Process-point to thermal-field surrogates and their training loops.

Three networks share one decoder layout (a fully connected stem, a reshape
to a coarse grid, then upsample/convolve stages):

* ``TemperatureCNN`` regresses the normalized field (MSE).
* ``MaskerCNN`` predicts the probability that a voxel is ambient (BCE).
* ``MaskedTemperatureCNN`` regresses the field only where the ambient mask
  is 0; at inference its output is zeroed wherever the masker says ambient.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data.crop import CropSpec, crop_offset
from .data.dataset import TRAIN, Dataset
from .data.normalization import NormalizationSpec, ProcessPointScaler, denormalize
from .engine import (
    Adam,
    Checkpoint,
    Conv3D,
    FullyConnected,
    LeakyReLU,
    Network,
    NetworkSpec,
    ReduceOnPlateau,
    Reshape,
    Sigmoid,
    Tensor,
    TrilinearUpsample,
    ValvedLeakyReLU,
    bce_loss,
    init_parameters,
    masked_mse_loss,
    mse_loss,
)
from .exceptions import ConfigurationError, DimensionError, NonFiniteGradientError, TrainingDivergedError

ROLES = ("T", "M", "MT")
MASK_THRESHOLD = 0.5


@dataclass
class SurrogateConfig:
    """Architecture and training hyperparameters.

    ``input_ranges`` is ``[[P_min, P_max], [V_min, V_max], [t_min, t_max]]``
    (W, mm/s, us); ``None`` means fit it from the training points.
    """

    coarse_shape: tuple[int, int, int] = (4, 2, 2)
    channels: int = 128
    stages: int = 4
    slope: float = 0.01
    batch_size: int = 4
    max_epochs: int = 300
    seed: int = 0
    learning_rate: float = 2e-4
    plateau_factor: float = 0.2
    plateau_patience: int = 3
    minimum_lr: float = 1e-7
    input_ranges: list[list[float]] | None = None
    warm_start: bool = True
    predicted_masks: bool = False
    precision: str = "float64"

    def __post_init__(self):
        self.coarse_shape = tuple(int(c) for c in self.coarse_shape)

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return tuple(c * 2**self.stages for c in self.coarse_shape)

    def channel_schedule(self) -> list[int]:
        """Channel count entering each stage, then the count leaving the last."""
        return [self.channels // 2**s for s in range(self.stages + 1)]

    def validate(self, crop: CropSpec | None = None) -> None:
        if len(self.coarse_shape) != 3 or min(self.coarse_shape) < 1:
            raise ConfigurationError(f"coarse_shape must be three positive ints, got {self.coarse_shape}")
        if self.stages < 0:
            raise ConfigurationError("stages must be >= 0")
        if self.channels < 2**self.stages:
            raise ConfigurationError(f"{self.channels} channels cannot be halved {self.stages} times")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and max_epochs >= 0")
        if self.precision not in ("float32", "float64"):
            raise ConfigurationError(f"precision must be float32 or float64, got {self.precision!r}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if crop is not None and crop.shape != self.output_shape:
            raise ConfigurationError(
                f"coarse grid {self.coarse_shape} x 2^{self.stages} = {self.output_shape} does not match crop {crop.shape}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coarse_shape"] = list(self.coarse_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def for_crop(cls, crop: CropSpec, stages: int = 4, **kwargs) -> "SurrogateConfig":
        """Config whose output matches ``crop`` after ``stages`` doublings."""
        div = 2**stages
        if any(s % div for s in crop.shape):
            raise ConfigurationError(f"crop {crop.shape} is not divisible by 2^{stages}")
        return cls(coarse_shape=tuple(s // div for s in crop.shape), stages=stages, **kwargs)


def build_network(config: SurrogateConfig, role: str, crop: CropSpec | None = None) -> NetworkSpec:
    role = _check_role(role)
    config.validate(crop)
    c0 = config.channels
    layers: list = [
        FullyConnected(3, c0 * int(np.prod(config.coarse_shape))),
        Reshape((c0,) + config.coarse_shape),
    ]
    sched = config.channel_schedule()
    for s in range(config.stages):
        layers += [TrilinearUpsample(), Conv3D(sched[s], sched[s + 1]), LeakyReLU(config.slope)]
    layers.append(Conv3D(sched[-1], 1))
    layers.append(Sigmoid() if role == "M" else ValvedLeakyReLU(config.slope))
    return NetworkSpec(tuple(layers))


def _check_role(role: str) -> str:
    r = str(role).upper()
    if r not in ROLES:
        raise ConfigurationError(f"role must be one of {ROLES}, got {role!r}")
    return r


def transfer_parameters(source: Checkpoint, target_spec: NetworkSpec, seed: int) -> list[np.ndarray]:
    """Copy every parameter from ``source`` except the last layer's, which is freshly initialized."""
    shapes = target_spec.parameter_shapes()
    src_shapes = source.spec.parameter_shapes()
    if [s for _, s in shapes] != [s for _, s in src_shapes]:
        raise ConfigurationError("warm-start checkpoint has a different architecture")
    fresh = init_parameters(target_spec, seed)
    out = [p.astype(np.float64) for p in source.params]
    out[-2:] = fresh[-2:]
    return out


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


class _SurrogateBase(BaseEstimator):
    role = "T"

    def __init__(
        self,
        coarse_shape=(4, 2, 2),
        channels=128,
        stages=4,
        slope=0.01,
        batch_size=4,
        max_epochs=300,
        seed=0,
        learning_rate=2e-4,
        input_ranges=None,
        precision="float64",
        init_from=None,
        log=None,
    ):
        self.coarse_shape = coarse_shape
        self.channels = channels
        self.stages = stages
        self.slope = slope
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.seed = seed
        self.learning_rate = learning_rate
        self.input_ranges = input_ranges
        self.precision = precision
        self.init_from = init_from
        self.log = log

    @classmethod
    def from_config(cls, config: SurrogateConfig, **kwargs):
        names = cls._get_param_names()
        d = {k: v for k, v in config.to_dict().items() if k in names}
        return cls(**d, **kwargs)

    def _config(self) -> SurrogateConfig:
        return SurrogateConfig(
            coarse_shape=tuple(self.coarse_shape),
            channels=self.channels,
            stages=self.stages,
            slope=self.slope,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            seed=self.seed,
            learning_rate=self.learning_rate,
            input_ranges=self.input_ranges,
            precision=self.precision,
            warm_start=self.init_from is not None,
        )

    # subclasses define the per-batch loss
    def _loss(self, pred: Tensor, y: np.ndarray, mask: np.ndarray | None) -> Tensor:
        raise NotImplementedError

    def _initial_params(self, spec: NetworkSpec, config: SurrogateConfig):
        if self.init_from is None:
            return init_parameters(spec, config.seed)
        return transfer_parameters(self.init_from, spec, config.seed)

    def _check_targets(self, X, y, mask):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 3:
            raise DimensionError(f"process points need 3 columns (P, V, t), got {X.shape[1]}")
        y = np.asarray(y, dtype=np.float64)
        expected = (X.shape[0],) + self.config_.output_shape
        if y.shape != expected:
            raise DimensionError(f"targets have shape {y.shape}, expected {expected}")
        if mask is not None:
            mask = np.asarray(mask)
            if mask.shape != expected:
                raise DimensionError(f"mask has shape {mask.shape}, expected {expected}")
        return X, y, mask

    def fit(self, X, y, mask=None):
        """Train on process points ``X`` (n, 3) against fields ``y`` (n, l, w, d)."""
        config = self._config()
        config.validate()
        self.config_ = config
        X, y, mask = self._check_targets(X, y, mask)
        if X.shape[0] == 0:
            raise ConfigurationError("training split is empty")
        self.scaler_ = ProcessPointScaler(self.input_ranges).fit(X)
        config.input_ranges = self.scaler_.ranges_list()
        spec = build_network(config, self.role)
        net = Network(spec, self._initial_params(spec, config), dtype=config.precision)
        self.network_ = net
        self.history_: list[EpochRecord] = []

        inputs = self.scaler_.transform(X)
        targets = y[:, None]
        masks = None if mask is None else mask[:, None]
        opt = Adam(net.params, lr=config.learning_rate)
        sched = ReduceOnPlateau(opt, config.plateau_factor, config.plateau_patience, config.minimum_lr)
        rng = np.random.default_rng(config.seed)
        n = X.shape[0]
        last_good = net.parameter_arrays()
        for epoch in range(config.max_epochs):
            total = 0.0
            for idx in _batches(n, config.batch_size, rng):
                opt.zero_grad()
                loss = self._loss(net(inputs[idx], mode="train"), targets[idx], None if masks is None else masks[idx])
                value = loss.item()
                if not math.isfinite(value):
                    self._diverged(f"epoch {epoch}: loss is {value}", last_good)
                loss.backward()
                try:
                    opt.step()
                except NonFiniteGradientError as exc:
                    self._diverged(f"epoch {epoch}: {exc}", last_good)
                total += value * len(idx)
            last_good = net.parameter_arrays()
            lr = sched.step(total / n)
            rec = EpochRecord(epoch, total / n, lr)
            self.history_.append(rec)
            if self.log is not None:
                self.log(self.role, rec)
            if sched.at_floor:
                break
        return self

    def _diverged(self, message: str, last_good):
        ckpt = Checkpoint(self.network_.spec, last_good, self.config_.seed, self._metadata())
        raise TrainingDivergedError(f"training diverged at {message}", last_good=ckpt)

    def _forward(self, X, batch_size: int = 8) -> np.ndarray:
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        inputs = self.scaler_.transform(X)
        out = np.empty((X.shape[0],) + self.config_.output_shape)
        for start in range(0, X.shape[0], batch_size):
            out[start : start + batch_size] = self.network_(inputs[start : start + batch_size], mode="eval").data[:, 0]
        return out

    def predict(self, X) -> np.ndarray:
        return self._forward(X)

    def _metadata(self, **extra) -> dict:
        meta = {
            "role": self.role,
            "config": self.config_.to_dict(),
            "history": [asdict(r) for r in getattr(self, "history_", [])],
            "input_ranges": self.config_.input_ranges,
        }
        meta.update(extra)
        return meta

    def to_checkpoint(self, **metadata) -> Checkpoint:
        check_is_fitted(self, "network_")
        return Checkpoint.from_network(self.network_, self.config_.seed, self._metadata(**metadata))

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint):
        if ckpt.role != cls.role:
            raise ConfigurationError(f"checkpoint role is {ckpt.role!r}, expected {cls.role!r}")
        config = SurrogateConfig.from_dict(ckpt.metadata["config"])
        est = cls.from_config(config)
        est.config_ = config
        est.scaler_ = ProcessPointScaler(ckpt.metadata["input_ranges"]).fit(None)
        est.network_ = ckpt.to_network(config.precision)
        est.history_ = [EpochRecord(**r) for r in ckpt.metadata.get("history", [])]
        return est


class TemperatureCNN(_SurrogateBase):
    """Normalized temperature regressor trained with plain MSE."""

    role = "T"

    def _loss(self, pred, y, mask):
        return mse_loss(pred, y)


class MaskerCNN(_SurrogateBase):
    """Ambient-voxel classifier. ``fit(X, masks)``; ``predict`` thresholds at 0.5."""

    role = "M"

    def _loss(self, pred, y, mask):
        return bce_loss(pred, y)

    def predict_proba(self, X) -> np.ndarray:
        return self._forward(X)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= MASK_THRESHOLD).astype(np.uint8)


class MaskedTemperatureCNN(_SurrogateBase):
    """Temperature regressor whose loss ignores voxels flagged ambient by ``mask``."""

    role = "MT"

    def fit(self, X, y, mask=None):
        if mask is None:
            raise ConfigurationError("MaskedTemperatureCNN.fit needs an ambient mask")
        return super().fit(X, y, mask)

    def _loss(self, pred, y, mask):
        return masked_mse_loss(pred, y, mask)


# dataset-level entry points


def _training_arrays(dataset: Dataset):
    train = dataset.subset(TRAIN)
    if len(train) == 0:
        raise ConfigurationError("dataset has no training records")
    return train, train.process_points(), train.fields, train.masks


def _resolve_config(config: SurrogateConfig | None, dataset: Dataset) -> SurrogateConfig:
    config = SurrogateConfig.for_crop(dataset.manifest.crop) if config is None else config
    config.validate(dataset.manifest.crop)
    if config.input_ranges is None:
        config = replace(config, input_ranges=dataset.manifest.input_ranges())
    return config


def _dataset_metadata(dataset: Dataset) -> dict:
    m = dataset.manifest
    return {
        "normalization": m.normalization.to_dict(),
        "crop": m.crop.to_dict(),
        "material": m.material,
        "domain": dict(m.domain),
    }


def _log_fn(log):
    if log is None:
        return None
    if callable(log):
        return log

    def write(role, rec):
        log.write(json.dumps({"role": role, **asdict(rec)}, sort_keys=True) + "\n")
        log.flush()

    return write


def train_tcnn(dataset: Dataset, config: SurrogateConfig | None = None, log=None) -> Checkpoint:
    config = _resolve_config(config, dataset)
    _, X, y, _ = _training_arrays(dataset)
    est = TemperatureCNN.from_config(config, log=_log_fn(log)).fit(X, y)
    return est.to_checkpoint(**_dataset_metadata(dataset))


def train_mcnn(
    dataset: Dataset, config: SurrogateConfig | None = None, pretrained_t: Checkpoint | None = None, log=None
) -> Checkpoint:
    config = _resolve_config(config, dataset)
    if pretrained_t is not None and pretrained_t.role != "T":
        raise ConfigurationError(f"M-CNN warm start needs a T checkpoint, got role {pretrained_t.role!r}")
    init = pretrained_t if config.warm_start else None
    _, X, _, masks = _training_arrays(dataset)
    est = MaskerCNN.from_config(config, init_from=init, log=_log_fn(log)).fit(X, masks)
    return est.to_checkpoint(**_dataset_metadata(dataset))


def train_mtcnn(
    dataset: Dataset,
    config: SurrogateConfig | None = None,
    mask_source: Checkpoint | None = None,
    pretrained_t: Checkpoint | None = None,
    log=None,
) -> Checkpoint:
    """Masked-MSE training. Needs a trained M-CNN checkpoint.

    Ground-truth masks drive the loss unless ``config.predicted_masks`` is set,
    in which case the M-CNN's thresholded output is used instead.
    """
    if mask_source is None or mask_source.role != "M":
        raise ConfigurationError("MT-CNN training needs a trained M-CNN checkpoint")
    config = _resolve_config(config, dataset)
    _check_compatible(mask_source, dataset.manifest.crop)
    init = pretrained_t if config.warm_start else None
    _, X, y, masks = _training_arrays(dataset)
    if config.predicted_masks:
        masks = MaskerCNN.from_checkpoint(mask_source).predict(X)
    est = MaskedTemperatureCNN.from_config(config, init_from=init, log=_log_fn(log)).fit(X, y, masks)
    return est.to_checkpoint(**_dataset_metadata(dataset))


def _check_compatible(ckpt: Checkpoint, crop: CropSpec) -> None:
    have = CropSpec(**ckpt.metadata["crop"]) if "crop" in ckpt.metadata else None
    if have is not None and have != crop:
        raise ConfigurationError(f"checkpoint crop {have.shape} differs from {crop.shape}")


def predict_composite(points, mt: Checkpoint, m: Checkpoint) -> np.ndarray:
    """Normalized fields (n, l, w, d): MT-CNN output, 0 wherever the masker says ambient."""
    if mt.role != "MT" or m.role != "M":
        raise ConfigurationError(f"expected MT and M checkpoints, got {mt.role!r} and {m.role!r}")
    if mt.metadata.get("crop") != m.metadata.get("crop"):
        raise ConfigurationError("MT and M checkpoints were trained on different crops")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    temperature = MaskedTemperatureCNN.from_checkpoint(mt).predict(points)
    ambient = MaskerCNN.from_checkpoint(m).predict(points)
    return np.where(ambient == 1, 0.0, temperature)


@dataclass
class ThermalFieldSnapshot:
    temperature: np.ndarray  # (l, w, d) kelvin
    power: float
    velocity: float  # mm/s
    time: float  # us
    crop_offset: tuple[int, int, int] | None
    normalization: NormalizationSpec
    warnings: list[str] = field(default_factory=list)

    def metadata(self) -> dict:
        return {
            "power": self.power,
            "velocity": self.velocity,
            "time": self.time,
            "crop_offset": None if self.crop_offset is None else list(self.crop_offset),
            "normalization": self.normalization.to_dict(),
            "warnings": list(self.warnings),
            "min_temperature": float(self.temperature.min()),
            "max_temperature": float(self.temperature.max()),
        }


def beam_crop_offset(domain: dict, crop: CropSpec, velocity_mm_s: float, time_us: float):
    """Where the window sits in the simulation domain for a given (V, t)."""
    if not domain:
        return None
    cell = domain["cell_size"]
    bx = domain["beam_start"] + velocity_mm_s * 1e-3 * time_us * 1e-6 / cell
    by = domain["ny"] / 2.0 if domain.get("beam_y") is None else domain["beam_y"]
    try:
        return crop_offset((domain["nx"], domain["ny"], domain["nz"]), crop, (bx, by))
    except ConfigurationError:
        return None


def infer_field(power: float, velocity: float, time: float, mt: Checkpoint, m: Checkpoint) -> ThermalFieldSnapshot:
    """One forward pass of both networks at (P [W], V [mm/s], t [us]), in kelvin."""
    point = np.array([[power, velocity, time]], dtype=np.float64)
    notes = []
    ranges = ProcessPointScaler(mt.metadata["input_ranges"]).fit(None)
    for name, unit, flag, (lo, hi), value in zip(
        ("P", "V", "t"), ("W", "mm/s", "us"), ranges.out_of_range(point)[0], ranges.ranges_list(), point[0]
    ):
        if flag:
            notes.append(f"{name}={value:g} {unit} outside training range [{lo:g}, {hi:g}]")
    for note in notes:
        warnings.warn(note, RuntimeWarning, stacklevel=2)
    norm = NormalizationSpec(**mt.metadata["normalization"])
    crop = CropSpec(**mt.metadata["crop"])
    field_n = predict_composite(point, mt, m)[0]
    return ThermalFieldSnapshot(
        temperature=denormalize(field_n, norm),
        power=float(power),
        velocity=float(velocity),
        time=float(time),
        crop_offset=beam_crop_offset(mt.metadata.get("domain", {}), crop, velocity, time),
        normalization=norm,
        warnings=notes,
    )


def load_estimator(ckpt: Checkpoint) -> _SurrogateBase:
    cls = {"T": TemperatureCNN, "M": MaskerCNN, "MT": MaskedTemperatureCNN}[_check_role(ckpt.role)]
    return cls.from_checkpoint(ckpt)


__all__: Sequence[str] = [
    "EpochRecord",
    "MaskedTemperatureCNN",
    "MaskerCNN",
    "SurrogateConfig",
    "TemperatureCNN",
    "ThermalFieldSnapshot",
    "beam_crop_offset",
    "build_network",
    "infer_field",
    "load_estimator",
    "predict_composite",
    "train_mcnn",
    "train_mtcnn",
    "train_tcnn",
    "transfer_parameters",
]
