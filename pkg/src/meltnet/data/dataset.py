"""Training samples built from simulated cases, and their on-disk container.

A dataset directory contains ``manifest`` (JSON), ``fields.bin`` (normalized
cropped fields, float32, record-major) and ``masks.bin`` (ambient masks, one
byte per voxel).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..container import read_blob, read_text, write_blob, write_text
from ..exceptions import ConfigurationError, VersionMismatchError
from ..physics.cases import StoredCase
from ..physics.solver import SOLVER_VERSION
from .crop import CropSpec, build_mask_target, crop_roi
from .normalization import NormalizationSpec, ProcessPointScaler, compute_clip_threshold, normalize

DATASET_FORMAT_VERSION = 1
TRAIN, VAL = "train", "val"


@dataclass
class SampleRecord:
    case_id: str
    frame_index: int
    power: float  # W
    velocity: float  # mm/s
    time: float  # us
    field: np.ndarray  # (1, l, w, d) normalized float32
    mask: np.ndarray  # (1, l, w, d) uint8, 1 = raw value was exactly ambient
    offset: tuple[int, int, int]
    split: str = TRAIN

    @property
    def process_point(self) -> tuple[float, float, float]:
        return (self.power, self.velocity, self.time)


@dataclass
class DatasetManifest:
    cases: list[dict] = field(default_factory=list)
    normalization: NormalizationSpec = field(default_factory=NormalizationSpec)
    crop: CropSpec = field(default_factory=CropSpec)
    material: str = "Ti64"
    ambient_temperature: float = 293.0
    generator_version: str = SOLVER_VERSION
    seed: int | None = None
    records: list[dict] = field(default_factory=list)
    domain: dict = field(default_factory=dict)  # grid and beam geometry shared by all cases
    format_version: int = DATASET_FORMAT_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["normalization"] = self.normalization.to_dict()
        d["crop"] = self.crop.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        d = dict(d)
        version = d.get("format_version")
        if version != DATASET_FORMAT_VERSION:
            raise VersionMismatchError(f"dataset format {version}, expected {DATASET_FORMAT_VERSION}")
        d["normalization"] = NormalizationSpec(**d["normalization"])
        d["crop"] = CropSpec(**d["crop"])
        return cls(**d)

    def case_splits(self) -> dict[str, str]:
        return {c["case_id"]: c["split"] for c in self.cases}

    def input_ranges(self) -> list[list[float]]:
        """[[P_min, P_max], [V_min, V_max], [t_min, t_max]] over training records."""
        rows = [r for r in self.records if r["split"] == TRAIN] or self.records
        if not rows:
            return [[0.0, 1.0]] * 3
        pts = np.array([[r["power"], r["velocity"], r["time"]] for r in rows])
        return [[float(a), float(b)] for a, b in zip(pts.min(axis=0), pts.max(axis=0))]


@dataclass
class Dataset:
    manifest: DatasetManifest
    fields: np.ndarray  # (n, l, w, d) float32
    masks: np.ndarray  # (n, l, w, d) uint8

    def __len__(self) -> int:
        return len(self.manifest.records)

    @property
    def records(self) -> list[SampleRecord]:
        out = []
        for i, r in enumerate(self.manifest.records):
            out.append(
                SampleRecord(
                    case_id=r["case_id"],
                    frame_index=r["frame_index"],
                    power=r["power"],
                    velocity=r["velocity"],
                    time=r["time"],
                    field=self.fields[i][None],
                    mask=self.masks[i][None],
                    offset=tuple(r["offset"]),
                    split=r["split"],
                )
            )
        return out

    def process_points(self) -> np.ndarray:
        if not self.manifest.records:
            return np.empty((0, 3))
        return np.array([[r["power"], r["velocity"], r["time"]] for r in self.manifest.records], dtype=np.float64)

    def subset(self, split: str | None) -> "Dataset":
        if split is None:
            return self
        idx = [i for i, r in enumerate(self.manifest.records) if r["split"] == split]
        manifest = replace(self.manifest, records=[self.manifest.records[i] for i in idx])
        return Dataset(manifest, self.fields[idx], self.masks[idx])

    def input_scaler(self) -> ProcessPointScaler:
        return ProcessPointScaler(self.manifest.input_ranges()).fit(None)


def select_frames(frame_count: int, stride: int = 1) -> list[int]:
    """Frames (k + 1) * stride - 1, i.e. every ``stride``-th frame ending on the last."""
    if stride < 1:
        raise ConfigurationError("frame stride must be >= 1")
    return list(range(stride - 1, frame_count, stride))


def build_dataset(
    cases: Sequence[StoredCase],
    crop: CropSpec = CropSpec(),
    normalization: NormalizationSpec | None = None,
    frame_stride: int = 1,
    seed: int | None = None,
    t_melt: float | None = None,
) -> Dataset:
    """Crop, normalize and mask every selected frame of every case.

    With ``normalization=None`` the upper bound is fitted from the pooled raw
    frames (``t_melt`` required); otherwise the given constants are used.
    """
    if normalization is None:
        if t_melt is None:
            raise ConfigurationError("t_melt is needed to derive the clip threshold")
        normalization = NormalizationSpec(t_max=compute_clip_threshold((c.frames for c in cases), t_melt))
    materials = {c.meta["material"]["name"] for c in cases}
    if len(materials) > 1:
        raise ConfigurationError(f"cases mix materials: {sorted(materials)}")
    ambients = {c.meta["config"]["ambient_temperature"] for c in cases}
    if len(ambients) > 1:
        raise ConfigurationError("cases disagree on ambient temperature")
    ambient = ambients.pop() if ambients else 293.0
    domains = {tuple(sorted(_domain(c.config).items())) for c in cases}
    if len(domains) > 1:
        raise ConfigurationError("cases disagree on grid or beam geometry")

    records, fields, masks, case_rows = [], [], [], []
    for case in sorted(cases, key=lambda c: c.case_id):
        cfg = case.config
        case_rows.append(
            {
                "case_id": case.case_id,
                "power": cfg.power,
                "velocity": cfg.velocity * 1e3,
                "cell_size": cfg.cell_size,
                "frame_count": cfg.frame_count,
                "split": TRAIN,
            }
        )
        for k in select_frames(cfg.frame_count, frame_stride):
            window, offset = crop_roi(case.frames[k], crop, case.beam_cell(k))
            fields.append(normalize(window, normalization).astype(np.float32))
            masks.append(build_mask_target(window, ambient))
            records.append(
                {
                    "case_id": case.case_id,
                    "frame_index": k,
                    "power": cfg.power,
                    "velocity": cfg.velocity * 1e3,
                    "time": case.frame_time(k) * 1e6,
                    "offset": list(offset),
                    "split": TRAIN,
                }
            )
    manifest = DatasetManifest(
        cases=case_rows,
        normalization=normalization,
        crop=crop,
        material=materials.pop() if materials else "Ti64",
        ambient_temperature=ambient,
        seed=seed,
        records=records,
        domain=dict(domains.pop()) if domains else {},
    )
    shape = (0,) + crop.shape
    return Dataset(
        manifest,
        np.stack(fields) if fields else np.empty(shape, np.float32),
        np.stack(masks) if masks else np.empty(shape, np.uint8),
    )


def _domain(config) -> dict:
    return {
        "nx": config.nx,
        "ny": config.ny,
        "nz": config.nz,
        "cell_size": config.cell_size,
        "beam_start": config.beam_start,
        "beam_y": config.beam_y,
    }


def split_train_val(manifest: DatasetManifest, fraction: float = 0.85, seed: int = 0) -> DatasetManifest:
    """Assign whole cases to train/val. ``fraction`` is the train share."""
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"train fraction must lie in (0, 1), got {fraction}")
    n = len(manifest.cases)
    if n < 2:
        raise ConfigurationError("need at least two cases to split")
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train_ids = {manifest.cases[i]["case_id"] for i in order[:n_train]}
    cases = [dict(c, split=TRAIN if c["case_id"] in train_ids else VAL) for c in manifest.cases]
    records = [dict(r, split=TRAIN if r["case_id"] in train_ids else VAL) for r in manifest.records]
    return replace(manifest, cases=cases, records=records, seed=seed)


def write_dataset(dataset: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_text(directory / "manifest", dataset.manifest.to_dict())
    write_blob(directory / "fields.bin", dataset.fields, "<f4")
    write_blob(directory / "masks.bin", dataset.masks, "u1")
    return directory


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest = DatasetManifest.from_dict(read_text(directory / "manifest"))
    shape = (len(manifest.records),) + manifest.crop.shape
    fields = read_blob(directory / "fields.bin", "<f4", shape).astype(np.float32)
    masks = read_blob(directory / "masks.bin", "u1", shape).astype(np.uint8)
    return Dataset(manifest, fields, masks)
