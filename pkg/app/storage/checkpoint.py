"""
Checkpoint file format (little-endian throughout):

    magic      4 bytes  b"OCRX"
    version    u32
    kind       u32 length + UTF-8 model kind
    epoch      u32
    parameters u32 count, then records
    optimizer  u32 count, then records
    extra      u32 length + UTF-8 JSON (sorted keys): optimizer scalars,
               RNG state, loss traces, architecture settings

    record     u32 name length, UTF-8 name, u32 ndim, ndim x u32 dims,
               prod(dims) x float32 payload

Saving the same checkpoint twice yields identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core.errors import CheckpointFormatError, CheckpointKindError, CheckpointVersionError
from app.networks import MODEL_KINDS

MAGIC = b"OCRX"
FORMAT_VERSION = 1

_U32 = struct.Struct("<I")
_F32 = np.dtype("<f4")


class ModelCheckpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: str = Field(..., description="One of the five model kinds")
    epoch: int = Field(0, ge=0, description="Epochs completed when saved")
    parameters: Dict[str, np.ndarray] = Field(default_factory=dict)
    optimizer: Dict[str, np.ndarray] = Field(default_factory=dict)
    extra: Dict[str, Any] = Field(default_factory=dict)


def _encode_records(table: Dict[str, np.ndarray]) -> bytes:
    chunks = [_U32.pack(len(table))]
    for name, array in table.items():
        encoded = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(array.ndim))
        chunks.extend(_U32.pack(d) for d in array.shape)
        chunks.append(np.ascontiguousarray(array, dtype=_F32).tobytes())
    return b"".join(chunks)


def encode_checkpoint(checkpoint: ModelCheckpoint) -> bytes:
    if checkpoint.kind not in MODEL_KINDS:
        raise CheckpointKindError("|".join(MODEL_KINDS), checkpoint.kind)
    kind = checkpoint.kind.encode("utf-8")
    extra = json.dumps(checkpoint.extra, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([
        MAGIC,
        _U32.pack(FORMAT_VERSION),
        _U32.pack(len(kind)), kind,
        _U32.pack(checkpoint.epoch),
        _encode_records(checkpoint.parameters),
        _encode_records(checkpoint.optimizer),
        _U32.pack(len(extra)), extra,
    ])


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf = buf
        self.pos = 0
        self.source = source

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise CheckpointFormatError(
                f"{self.source}: truncated while reading {what} at byte {self.pos} "
                f"(need {n}, have {len(self.buf) - self.pos})")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def text(self, what: str) -> str:
        raw = self.take(self.u32(f"{what} length"), what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"{self.source}: {what} is not UTF-8 at byte {self.pos}") from exc

    def records(self, table: str) -> Dict[str, np.ndarray]:
        count = self.u32(f"{table} count")
        out: Dict[str, np.ndarray] = {}
        for _ in range(count):
            name = self.text(f"{table} name")
            if name in out:
                raise CheckpointFormatError(f"{self.source}: duplicate {table} entry '{name}'")
            ndim = self.u32(f"'{name}' rank")
            if ndim > 8:
                raise CheckpointFormatError(f"{self.source}: '{name}' claims rank {ndim}")
            shape = tuple(self.u32(f"'{name}' dims") for _ in range(ndim))
            count_values = math.prod(shape)
            if count_values > (len(self.buf) - self.pos) // _F32.itemsize:
                raise CheckpointFormatError(
                    f"{self.source}: '{name}' claims shape {shape}, more values than the {len(self.buf) - self.pos} "
                    f"bytes left at byte {self.pos}")
            payload = self.take(count_values * _F32.itemsize, f"'{name}' payload")
            out[name] = np.frombuffer(payload, dtype=_F32).astype(np.float32).reshape(shape)
        return out


def decode_checkpoint(buf: bytes, source: str = "<bytes>", expected_kind: Optional[str] = None) -> ModelCheckpoint:
    reader = _Reader(buf, source)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    version = reader.u32("version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{source}: format version {version}, this build reads {FORMAT_VERSION}")
    kind = reader.text("model kind")
    if kind not in MODEL_KINDS:
        raise CheckpointKindError("|".join(MODEL_KINDS), kind)
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointKindError(expected_kind, kind)
    epoch = reader.u32("epoch")
    parameters = reader.records("parameter")
    optimizer = reader.records("optimizer")
    extra_text = reader.text("extra")
    try:
        extra = json.loads(extra_text) if extra_text else {}
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{source}: extra block is not valid JSON ({exc})") from exc
    if not isinstance(extra, dict):
        raise CheckpointFormatError(f"{source}: extra block must be a JSON object, got {type(extra).__name__}")
    if reader.pos != len(buf):
        raise CheckpointFormatError(f"{source}: {len(buf) - reader.pos} unexpected trailing bytes")
    return ModelCheckpoint(kind=kind, epoch=epoch, parameters=parameters, optimizer=optimizer, extra=extra)


def save_checkpoint(checkpoint: ModelCheckpoint, path: Union[str, Path]) -> str:
    """Write the checkpoint and return the SHA-256 of its bytes."""
    data = encode_checkpoint(checkpoint)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path: Union[str, Path], expected_kind: Optional[str] = None) -> ModelCheckpoint:
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), str(path), expected_kind)


def file_sha256(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def merge_tables(prefix_tables: Iterable[Tuple[str, Dict[str, np.ndarray]]]) -> Dict[str, np.ndarray]:
    """Flatten several named tables into one, prefixing each name; rejects collisions."""
    merged: Dict[str, np.ndarray] = {}
    for prefix, table in prefix_tables:
        for name, array in table.items():
            key = f"{prefix}{name}"
            if key in merged:
                raise CheckpointFormatError(f"name collision on '{key}'")
            merged[key] = array
    return merged


def split_table(table: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {name[len(prefix):]: array for name, array in table.items() if name.startswith(prefix)}
