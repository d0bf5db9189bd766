"""Case directories on disk and the multi-case generator.

A case directory holds ``meta`` (JSON), ``frames.bin`` (float32 kelvin,
frame-major then x, y, z) and ``voids.bin`` (one byte per cell, same order).
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..container import read_blob, read_text, write_blob, write_text
from .materials import MaterialProperties
from .solver import CaseResult, SimulationConfig, run_case

WORKERS_ENV = "MELTNET_WORKERS"


@dataclass
class StoredCase:
    case_id: str
    meta: dict
    frames: np.ndarray
    voids: np.ndarray

    @property
    def config(self) -> SimulationConfig:
        return SimulationConfig.from_dict(self.meta["config"])

    def frame_time(self, index: int) -> float:
        return self.meta["frame_times"][index]

    def beam_cell(self, index: int) -> tuple[float, float]:
        c = self.config
        return c.beam_x(self.frame_time(index)) / c.cell_size, c.beam_y_position / c.cell_size


def case_id_for(config: SimulationConfig) -> str:
    return f"{config.material}_P{config.power:g}_V{config.velocity * 1e3:g}"


def write_case(result: CaseResult, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_text(directory / "meta", result.metadata())
    write_blob(directory / "frames.bin", result.frames, "<f4")
    write_blob(directory / "voids.bin", result.voids.astype(np.uint8), "u1")
    return directory


def read_case(directory) -> StoredCase:
    directory = Path(directory)
    meta = read_text(directory / "meta")
    c = meta["config"]
    shape = (c["frame_count"], c["nx"], c["ny"], c["nz"])
    frames = read_blob(directory / "frames.bin", "<f4", shape).astype(np.float32)
    voids = read_blob(directory / "voids.bin", "u1", shape).astype(bool)
    return StoredCase(directory.name, meta, frames, voids)


def list_cases(root) -> list[Path]:
    return sorted(p for p in Path(root).iterdir() if p.is_dir() and (p / "meta").exists())


def _run_and_write(args) -> str:
    config, material, out_dir = args
    result = run_case(config, material)
    write_case(result, out_dir)
    return str(out_dir)


def worker_count(default: int | None = None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return default or 1


def case_grid(base: SimulationConfig, powers: Sequence[float], velocities: Sequence[float]) -> list[SimulationConfig]:
    """Every (power, velocity) pair, velocities in m/s."""
    return [replace(base, power=float(p), velocity=float(v)) for p in powers for v in velocities]


def generate_cases(
    configs: Iterable[SimulationConfig],
    out_root,
    material: MaterialProperties | None = None,
    workers: int | None = None,
) -> list[Path]:
    """Run each case in its own worker process and write it under ``out_root``."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = [(c, material, out_root / case_id_for(c)) for c in configs]
    n = min(worker_count(workers), max(len(jobs), 1))
    if n == 1:
        done = [_run_and_write(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            done = list(pool.map(_run_and_write, jobs))
    return [Path(d) for d in done]
