"""Beam-following region-of-interest crops and ambient masks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..exceptions import ConfigurationError


@dataclass(frozen=True)
class CropSpec:
    """Window size in cells. Centred on the beam in x and y, flush with the top in z."""

    length: int = 64
    width: int = 32
    depth: int = 32

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.length, self.width, self.depth)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def parse(cls, text: str) -> "CropSpec":
        parts = [int(p) for p in text.lower().replace("x", ",").split(",") if p.strip()]
        if len(parts) != 3:
            raise ConfigurationError(f"crop must look like LxWxD, got {text!r}")
        return cls(*parts)


def crop_offset(domain_shape, spec: CropSpec, beam_cell) -> tuple[int, int, int]:
    """Top-left-top corner of the window for a beam at fractional cell ``beam_cell`` (x, y)."""
    nx, ny, nz = domain_shape
    if spec.length > nx or spec.width > ny or spec.depth > nz:
        raise ConfigurationError(f"crop window {spec.shape} exceeds domain {tuple(domain_shape)}")
    bx, by = beam_cell
    ox = min(max(int(math.floor(bx - spec.length / 2 + 0.5)), 0), nx - spec.length)
    oy = min(max(int(math.floor(by - spec.width / 2 + 0.5)), 0), ny - spec.width)
    return ox, oy, 0


def crop_roi(frame: np.ndarray, spec: CropSpec, beam_cell) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Cut the window out of an (nx, ny, nz) frame. Returns (window, offset)."""
    ox, oy, oz = crop_offset(frame.shape, spec, beam_cell)
    window = frame[ox : ox + spec.length, oy : oy + spec.width, oz : oz + spec.depth]
    return np.array(window), (ox, oy, oz)


def build_mask_target(raw_frame: np.ndarray, ambient_temperature: float = 293.0) -> np.ndarray:
    """1 where the raw temperature equals ambient exactly (voids and unheated metal)."""
    return (np.asarray(raw_frame) == np.float32(ambient_temperature)).astype(np.uint8)
