"""Field metrics, their aggregation, and report/slice-image output."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data.normalization import NormalizationSpec, denormalize
from .exceptions import ConfigurationError, DimensionError
from .physics.cases import worker_count
from .physics.materials import MaterialProperties, get_material

REPORT_HEADER = ("case", "frame", "P", "V", "t", "rmse_pct", "iou_pct")


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes differ, {a.shape} vs {b.shape}")


def relative_rmse(pred_norm, truth_norm) -> float:
    """RMSE of two normalized fields, in percent of the normalized range."""
    p = np.asarray(pred_norm, dtype=np.float64)
    t = np.asarray(truth_norm, dtype=np.float64)
    _same_shape(p, t, "relative_rmse")
    if p.size == 0:
        raise DimensionError("relative_rmse: empty fields")
    return float(100.0 * np.sqrt(np.mean((p - t) ** 2)))


def melt_mask(field_kelvin, material: MaterialProperties | str) -> np.ndarray:
    """Voxels strictly above the mean of liquidus and solidus."""
    if isinstance(material, str):
        material = get_material(material)
    return np.asarray(field_kelvin) > material.t_melt


def iou(mask_a, mask_b) -> float:
    """Intersection over union in percent; two empty masks score 100."""
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    _same_shape(a, b, "iou")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 100.0
    return 100.0 * np.count_nonzero(a & b) / union


@dataclass(frozen=True)
class MetricsRecord:
    case_id: str
    frame: int
    power: float
    velocity: float
    time: float
    rmse_pct: float
    iou_pct: float
    pred_count: int | None = None
    truth_count: int | None = None
    intersection: int | None = None
    union: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.iou_pct <= 100.0:
            raise ValueError(f"iou_pct out of [0, 100]: {self.iou_pct}")
        if self.rmse_pct < 0:
            raise ValueError(f"rmse_pct is negative: {self.rmse_pct}")
        counts = (self.pred_count, self.truth_count, self.intersection, self.union)
        if None not in counts:
            p, t, i, u = counts
            if not i <= min(p, t) <= max(p, t) <= u:
                raise ValueError(f"inconsistent melt counts {counts}")

    @property
    def key(self) -> tuple[str, int]:
        return (self.case_id, self.frame)


def score_frame(
    pred_norm: np.ndarray,
    truth_norm: np.ndarray,
    normalization: NormalizationSpec,
    material: MaterialProperties,
    **ident,
) -> MetricsRecord:
    """Metrics for one predicted frame against its ground truth (both normalized)."""
    rmse = relative_rmse(pred_norm, truth_norm)
    a = melt_mask(denormalize(pred_norm, normalization), material)
    b = melt_mask(denormalize(truth_norm, normalization), material)
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    return MetricsRecord(
        rmse_pct=rmse,
        iou_pct=100.0 if union == 0 else 100.0 * inter / union,
        pred_count=int(a.sum()),
        truth_count=int(b.sum()),
        intersection=inter,
        union=union,
        **ident,
    )


def evaluate_predictions(dataset, predictions: np.ndarray, workers: int | None = None) -> list[MetricsRecord]:
    """One record per dataset sample, sorted by (case, frame)."""
    if predictions.shape != dataset.fields.shape:
        raise DimensionError(f"predictions {predictions.shape} vs dataset fields {dataset.fields.shape}")
    material = get_material(dataset.manifest.material)
    norm = dataset.manifest.normalization

    def one(i):
        r = dataset.manifest.records[i]
        return score_frame(
            predictions[i],
            dataset.fields[i],
            norm,
            material,
            case_id=r["case_id"],
            frame=r["frame_index"],
            power=r["power"],
            velocity=r["velocity"],
            time=r["time"],
        )

    n = worker_count(workers)
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            records = list(pool.map(one, range(len(dataset))))
    else:
        records = [one(i) for i in range(len(dataset))]
    return sorted(records, key=lambda r: r.key)


# aggregation


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _std(values: Sequence[float]) -> float:
    m = _mean(values)
    return math.sqrt(math.fsum((v - m) ** 2 for v in values) / len(values))


@dataclass(frozen=True)
class CaseSummary:
    case_id: str
    power: float
    velocity: float
    rmse_pct: float
    iou_pct: float
    count: int


@dataclass(frozen=True)
class FrameSummary:
    frame: int
    rmse_median: float
    rmse_q25: float
    rmse_q75: float
    iou_median: float
    iou_q25: float
    iou_q75: float
    count: int


def aggregate_by_case(records: Iterable[MetricsRecord]) -> list[CaseSummary]:
    groups: dict[str, list[MetricsRecord]] = defaultdict(list)
    for r in records:
        groups[r.case_id].append(r)
    out = []
    for case_id in sorted(groups):
        rs = groups[case_id]
        out.append(
            CaseSummary(
                case_id,
                rs[0].power,
                rs[0].velocity,
                _mean([r.rmse_pct for r in rs]),
                _mean([r.iou_pct for r in rs]),
                len(rs),
            )
        )
    return out


def _quartiles(values) -> tuple[float, float, float]:
    q25, med, q75 = np.percentile(np.asarray(values, dtype=np.float64), [25, 50, 75], method="linear")
    return float(med), float(q25), float(q75)


def aggregate_by_timestep(records: Iterable[MetricsRecord]) -> list[FrameSummary]:
    groups: dict[int, list[MetricsRecord]] = defaultdict(list)
    for r in records:
        groups[r.frame].append(r)
    out = []
    for frame in sorted(groups):
        rs = groups[frame]
        out.append(
            FrameSummary(frame, *_quartiles([r.rmse_pct for r in rs]), *_quartiles([r.iou_pct for r in rs]), len(rs))
        )
    return out


@dataclass(frozen=True)
class ReportTable:
    count: int
    rmse_mean: float
    rmse_std: float
    iou_mean: float
    iou_std: float
    per_case: tuple[CaseSummary, ...] = field(default_factory=tuple)
    per_frame: tuple[FrameSummary, ...] = field(default_factory=tuple)

    @classmethod
    def from_records(cls, records: Iterable[MetricsRecord]) -> "ReportTable":
        records = sorted(records, key=lambda r: r.key)
        if not records:
            return cls(0, math.nan, math.nan, math.nan, math.nan)
        rmse = [r.rmse_pct for r in records]
        ious = [r.iou_pct for r in records]
        return cls(
            len(records),
            _mean(rmse),
            _std(rmse),
            _mean(ious),
            _std(ious),
            tuple(aggregate_by_case(records)),
            tuple(aggregate_by_timestep(records)),
        )

    def summary(self) -> str:
        return (
            f"samples={self.count} rmse_pct={self.rmse_mean:.4f}+-{self.rmse_std:.4f} "
            f"iou_pct={self.iou_mean:.4f}+-{self.iou_std:.4f}"
        )

    def to_dict(self) -> dict:
        return asdict(self)


# output


def report_text(records: Iterable[MetricsRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in sorted(records, key=lambda r: r.key):
        # repr keeps every float bit so parsing reproduces the aggregates exactly
        w.writerow([r.case_id, r.frame, repr(r.power), repr(r.velocity), repr(r.time), repr(r.rmse_pct), repr(r.iou_pct)])
    return buf.getvalue()


def emit_report(records: Iterable[MetricsRecord], path) -> Path:
    path = Path(path)
    path.write_text(report_text(records), encoding="utf-8")
    return path


def parse_report(source) -> list[MetricsRecord]:
    """Read a report back (a path, or the text itself if it contains a newline)."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != REPORT_HEADER:
        raise ConfigurationError(f"report header must be {','.join(REPORT_HEADER)}")
    return [
        MetricsRecord(c, int(f), float(p), float(v), float(t), float(rm), float(io_))
        for c, f, p, v, t, rm, io_ in rows[1:]
    ]


_AXES = {"x": 0, "y": 1, "z": 2}


def slice_pixels(field_norm, axis, index: int) -> np.ndarray:
    """8-bit slice of a normalized (x, y, z) field.

    Rows run along the second remaining axis and columns along the first, so
    an xy slice (``axis="z"``) has y rows and x columns.
    """
    f = np.asarray(field_norm, dtype=np.float64)
    if f.ndim != 3:
        raise DimensionError(f"slice needs an (x, y, z) field, got shape {f.shape}")
    ax = _AXES.get(axis, axis) if isinstance(axis, str) else int(axis)
    if ax not in (0, 1, 2):
        raise DimensionError(f"axis must be x, y, z or 0-2, got {axis!r}")
    if not 0 <= index < f.shape[ax]:
        raise DimensionError(f"slice index {index} outside axis {ax} of length {f.shape[ax]}")
    plane = np.take(f, index, axis=ax).T
    return np.floor(255.0 * np.clip(plane, 0.0, 1.0) + 0.5).astype(np.uint8)


def emit_slice_image(field_norm, axis, index: int, path) -> Path:
    """Write a binary greyscale PGM (P5) of one slice."""
    pix = slice_pixels(field_norm, axis, index)
    h, w = pix.shape
    path = Path(path)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, dims, maxval, data = raw.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ConfigurationError("not an 8-bit binary PGM")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)
