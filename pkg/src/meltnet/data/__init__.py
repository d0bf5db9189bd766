from .crop import CropSpec, build_mask_target, crop_offset, crop_roi
from .dataset import (
    TRAIN,
    VAL,
    Dataset,
    DatasetManifest,
    SampleRecord,
    build_dataset,
    read_dataset,
    select_frames,
    split_train_val,
    write_dataset,
)
from .normalization import (
    NormalizationSpec,
    ProcessPointScaler,
    TemperatureScaler,
    compute_clip_threshold,
    denormalize,
    normalize,
)

__all__ = [
    "TRAIN",
    "VAL",
    "CropSpec",
    "Dataset",
    "DatasetManifest",
    "NormalizationSpec",
    "ProcessPointScaler",
    "SampleRecord",
    "TemperatureScaler",
    "build_dataset",
    "build_mask_target",
    "compute_clip_threshold",
    "crop_offset",
    "crop_roi",
    "denormalize",
    "normalize",
    "read_dataset",
    "select_frames",
    "split_train_val",
    "write_dataset",
]
