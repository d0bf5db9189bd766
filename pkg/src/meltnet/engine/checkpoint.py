"""Checkpoint files: a text header followed by a float32 parameter blob.

Layout::

    meltnet-checkpoint <format_version>\\n
    <header length in bytes>\\n
    <header: JSON with the network spec, seed and free-form metadata>\\n
    <parameters: little-endian float32, layer order, weight then bias,
     row-major within each tensor>
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import TruncatedBlobError, VersionMismatchError, FormatError
from .network import Network, NetworkSpec

MAGIC = "meltnet-checkpoint"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: list[np.ndarray]
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        # stored precision is float32; keep the in-memory copy identical to disk
        self.params = [np.asarray(p, dtype=np.float32) for p in self.params]

    @classmethod
    def from_network(cls, net: Network, seed: int = 0, metadata: dict | None = None) -> "Checkpoint":
        return cls(net.spec, net.parameter_arrays(), seed, dict(metadata or {}))

    def to_network(self, dtype=np.float64) -> Network:
        return Network(self.spec, [p.astype(dtype) for p in self.params], dtype=dtype)

    @property
    def role(self) -> str | None:
        return self.metadata.get("role")

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params))

    def to_bytes(self) -> bytes:
        header = json.dumps(
            {"network": self.spec.to_dict(), "seed": self.seed, "metadata": self.metadata},
            sort_keys=True,
        ).encode("utf-8")
        blob = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in self.params)
        return f"{MAGIC} {FORMAT_VERSION}\n{len(header)}\n".encode("ascii") + header + b"\n" + blob

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        try:
            first, rest = raw.split(b"\n", 1)
            magic, version = first.decode("ascii").split(" ")
            length_line, rest = rest.split(b"\n", 1)
            length = int(length_line)
        except ValueError as exc:
            raise FormatError("not a meltnet checkpoint") from exc
        if magic != MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        if int(version) != FORMAT_VERSION:
            raise VersionMismatchError(f"checkpoint format {version}, expected {FORMAT_VERSION}")
        if len(rest) < length + 1:
            raise TruncatedBlobError("checkpoint header is truncated")
        header = json.loads(rest[:length].decode("utf-8"))
        blob = rest[length + 1 :]
        spec = NetworkSpec.from_dict(header["network"])
        params, pos = [], 0
        for name, shape in spec.parameter_shapes():
            n = int(np.prod(shape)) * 4
            if pos + n > len(blob):
                raise TruncatedBlobError(f"checkpoint blob ends inside parameter {name}")
            params.append(np.frombuffer(blob[pos : pos + n], dtype="<f4").reshape(shape).astype(np.float32))
            pos += n
        if pos != len(blob):
            raise FormatError(f"checkpoint blob has {len(blob) - pos} trailing bytes")
        return cls(spec, params, int(header["seed"]), header["metadata"])

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
