"""Binary weight persistence (bit-exact, little-endian).

Layout:

  magic     4 bytes  b"AEW1"
  version   u32      currently 1
  confhash  32 bytes sha256 of the canonical model-config JSON
  count     u32      number of tensors
  tensor *  u16 name length, name (utf-8), u8 rank, u32 dim per axis,
            float64 data in C order

Loading refuses files whose config hash does not match the expected
config, so weights can never be silently applied to a different
architecture.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..core import FormatError
from .model import Model, ModelConfig, parameter_shapes

MAGIC = b"AEW1"
VERSION = 1


def save_weights(model: Model, path: str | Path):
    parts = [MAGIC, struct.pack("<I", VERSION), model.config.config_hash(),
             struct.pack("<I", len(model.weights))]
    for name, arr in model.weights.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes, source: str):
        self.blob = blob
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.source}: truncated weights file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(path: str | Path, config: ModelConfig) -> Model:
    source = str(path)
    reader = _Reader(Path(path).read_bytes(), source)
    if reader.take(4) != MAGIC:
        raise FormatError(f"{source}: not a weights file (bad magic)")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported weights version {version}")
    stored_hash = reader.take(32)
    if stored_hash != config.config_hash():
        raise FormatError(
            f"{source}: config hash mismatch; weights were saved for a "
            "different model configuration"
        )
    (count,) = reader.unpack("<I")
    expected = parameter_shapes(config)
    weights: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I")
        if name in weights:
            raise FormatError(f"{source}: duplicate tensor {name!r}")
        if name not in expected:
            raise FormatError(f"{source}: unexpected tensor {name!r}")
        if shape != expected[name]:
            raise FormatError(f"{source}: tensor {name!r} has shape {shape}, "
                              f"expected {expected[name]}")
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(reader.take(8 * size), dtype="<f8")
        weights[name] = data.astype(np.float64).reshape(shape)
    if reader.pos != len(reader.blob):
        raise FormatError(f"{source}: trailing bytes after last tensor")
    if set(weights) != set(expected):
        missing = sorted(set(expected) - set(weights))
        raise FormatError(f"{source}: missing tensors {missing}")
    return Model(config, weights)
