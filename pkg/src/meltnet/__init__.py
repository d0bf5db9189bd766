"""Melt pool thermal-field surrogates: a conduction simulator that produces
training data, a small autodiff engine, and three decoder networks that map
(power, scan speed, time) to a 3D temperature field."""

from .data import CropSpec, Dataset, NormalizationSpec, build_dataset, read_dataset, write_dataset
from .engine import Checkpoint, Network, NetworkSpec
from .evaluation import MetricsRecord, ReportTable, iou, melt_mask, relative_rmse
from .exceptions import (
    BackwardStateError,
    ChecksumError,
    ConfigurationError,
    DimensionError,
    EmptyPoolError,
    FormatError,
    MeltnetError,
    NonFiniteGradientError,
    SimulationInstabilityError,
    TrainingDivergedError,
    TruncatedBlobError,
    VersionMismatchError,
)
from .models import (
    MaskedTemperatureCNN,
    MaskerCNN,
    SurrogateConfig,
    TemperatureCNN,
    build_network,
    infer_field,
    predict_composite,
    train_mcnn,
    train_mtcnn,
    train_tcnn,
)
from .physics import SimulationConfig, get_material, run_case

__version__ = "0.1.0"

__all__ = [
    "BackwardStateError",
    "Checkpoint",
    "ChecksumError",
    "ConfigurationError",
    "CropSpec",
    "Dataset",
    "DimensionError",
    "EmptyPoolError",
    "FormatError",
    "MaskedTemperatureCNN",
    "MaskerCNN",
    "MeltnetError",
    "MetricsRecord",
    "Network",
    "NetworkSpec",
    "NonFiniteGradientError",
    "NormalizationSpec",
    "ReportTable",
    "SimulationConfig",
    "SimulationInstabilityError",
    "SurrogateConfig",
    "TemperatureCNN",
    "TrainingDivergedError",
    "TruncatedBlobError",
    "VersionMismatchError",
    "build_dataset",
    "build_network",
    "get_material",
    "infer_field",
    "iou",
    "melt_mask",
    "predict_composite",
    "read_dataset",
    "relative_rmse",
    "run_case",
    "train_mcnn",
    "train_mtcnn",
    "train_tcnn",
    "write_dataset",
]
