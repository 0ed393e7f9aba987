# app/repository/checkpoint_repository.py
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict

import numpy as np

from app.core.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"GFEF"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Metadata (config echo, classes, length, seed) plus named float32 tensors."""
    metadata: Dict[str, object]
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)


class CheckpointRepository:
    """
    Reads and writes the versioned binary checkpoint container.

    Layout, little-endian: magic, u32 version, u32-prefixed UTF-8 JSON metadata,
    u32 tensor count, then per tensor a u32-prefixed name, u32 ndim, u32 dims and
    row-major float32 values.
    """

    def save(self, path: str, checkpoint: Checkpoint):
        file_path = Path(path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        meta = json.dumps(checkpoint.metadata, sort_keys=True).encode("utf-8")
        with file_path.open("wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", FORMAT_VERSION))
            fh.write(struct.pack("<I", len(meta)))
            fh.write(meta)
            fh.write(struct.pack("<I", len(checkpoint.tensors)))
            for name, array in checkpoint.tensors.items():
                encoded = name.encode("utf-8")
                values = np.ascontiguousarray(array, dtype="<f4")
                fh.write(struct.pack("<I", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<I", values.ndim))
                fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
                fh.write(values.tobytes())
        logger.info("Saved checkpoint with %d tensors to %s", len(checkpoint.tensors), path)

    def load(self, path: str) -> Checkpoint:
        file_path = Path(path)
        if not file_path.exists():
            raise CheckpointError(f"Checkpoint not found: {path}")
        with file_path.open("rb") as fh:
            if fh.read(4) != MAGIC:
                raise CheckpointError(f"{path} is not a checkpoint file")
            version = _read_u32(fh)
            if version != FORMAT_VERSION:
                raise CheckpointError(f"Unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
            try:
                metadata = json.loads(_read_exact(fh, _read_u32(fh)).decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise CheckpointError(f"Corrupt checkpoint metadata in {path}") from exc
            tensors: Dict[str, np.ndarray] = {}
            for _ in range(_read_u32(fh)):
                name = _read_exact(fh, _read_u32(fh)).decode("utf-8")
                ndim = _read_u32(fh)
                shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim)) if ndim else ()
                count = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
                tensors[name] = data.reshape(shape).astype(np.float32)
            if fh.read(1):
                raise CheckpointError(f"Trailing bytes after the last tensor in {path}")
        return Checkpoint(metadata=metadata, tensors=tensors)


def _read_exact(fh: BinaryIO, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise CheckpointError("Checkpoint file is truncated")
    return data


def _read_u32(fh: BinaryIO) -> int:
    return struct.unpack("<I", _read_exact(fh, 4))[0]
