"""Named-tensor checkpoints and uniform weight averaging.

File layout (UCKP), all integers little-endian:

    magic    4 bytes  "UCKP"
    version  u32      currently 1
    count    u32      number of tensors
    tensor   count records, each:
                 name   u16 byte length + UTF-8 bytes
                 rank   u8
                 dims   rank * u32, all positive
                 data   prod(dims) IEEE-754 binary32, row-major

Averaging accumulates in float64 and rounds once to float32, so the
result is invariant to checkpoint order even for many ingredients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .errors import EngineError, FormatError

MAGIC = b"UCKP"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_NAME_LEN = struct.Struct("<H")
_RANK = struct.Struct("<B")


@dataclass(frozen=True)
class TensorEntry:
    """One named float32 tensor; immutable, row-major."""

    name: str
    array: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.array, dtype=np.float32)
        if arr.ndim == 0 or any(s == 0 for s in arr.shape):
            raise EngineError(f"tensor {self.name!r} must have positive dims, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise EngineError(f"tensor {self.name!r} contains non-finite values")
        arr = arr.copy() if arr is self.array else arr
        arr.flags.writeable = False
        object.__setattr__(self, "array", arr)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.array.shape


class Checkpoint:
    """Ordered map from tensor name to entry."""

    def __init__(self, tensors: Iterable[TensorEntry] = ()):
        self._tensors: dict[str, TensorEntry] = {}
        for t in tensors:
            self.add(t)

    def add(self, entry: TensorEntry) -> None:
        if entry.name in self._tensors:
            raise EngineError(f"duplicate tensor name {entry.name!r}")
        self._tensors[entry.name] = entry

    def __getitem__(self, name: str) -> TensorEntry:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[TensorEntry]:
        return iter(self._tensors.values())

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)


def write_checkpoint(ckpt: Checkpoint, sink: BinaryIO) -> int:
    """Write all tensors in their stored order; returns bytes written."""
    written = sink.write(_HEADER.pack(MAGIC, VERSION, len(ckpt)))
    for entry in ckpt:
        raw_name = entry.name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise EngineError(f"tensor name {entry.name!r} exceeds 65535 UTF-8 bytes")
        if entry.array.ndim > 0xFF:
            raise EngineError(f"tensor {entry.name!r} rank {entry.array.ndim} exceeds 255")
        written += sink.write(_NAME_LEN.pack(len(raw_name)) + raw_name)
        written += sink.write(_RANK.pack(entry.array.ndim))
        written += sink.write(struct.pack(f"<{entry.array.ndim}I", *entry.array.shape))
        written += sink.write(np.ascontiguousarray(entry.array, dtype="<f4").tobytes())
    return written


def read_checkpoint(source: BinaryIO) -> Checkpoint:
    """Read a UCKP stream; every malformation names its byte offset."""
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        buf = source.read(n)
        if len(buf) != n:
            raise FormatError(
                f"truncated payload at offset {offset}: expected {n} bytes for {what}"
            )
        offset += n
        return buf

    magic, version, count = _HEADER.unpack(take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise FormatError("bad magic at offset 0")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")

    ckpt = Checkpoint()
    for i in range(count):
        record_offset = offset
        (name_len,) = _NAME_LEN.unpack(take(_NAME_LEN.size, f"name length of tensor {i}"))
        try:
            name = take(name_len, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 name at offset {record_offset + 2}") from exc
        if name in ckpt:
            raise FormatError(f"duplicate tensor name {name!r} at offset {record_offset}")
        (rank,) = _RANK.unpack(take(_RANK.size, f"rank of {name!r}"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name!r}"))
        if any(d == 0 for d in dims):
            raise FormatError(f"zero dim in tensor {name!r} at offset {offset - 4 * rank}")
        need = 4 * int(np.prod(dims, dtype=np.int64)) if rank else 4
        data_offset = offset
        buf = source.read(need)
        offset += len(buf)
        if len(buf) != need:
            raise FormatError(
                f"length mismatch in tensor {name!r} at offset {data_offset}: "
                f"declared dims {tuple(dims)} need {need} bytes, got {len(buf)}"
            )
        arr = np.frombuffer(buf, dtype="<f4").reshape(dims)
        if not np.isfinite(arr).all():
            raise FormatError(f"non-finite value in tensor {name!r} at offset {data_offset}")
        ckpt.add(TensorEntry(name=name, array=arr))

    if source.read(1):
        raise FormatError(f"declared length mismatch: trailing bytes at offset {offset}")
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> int:
    with open(path, "wb") as fh:
        return write_checkpoint(ckpt, fh)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        return read_checkpoint(fh)


def soup_uniform(checkpoints: list[Checkpoint]) -> Checkpoint:
    """Element-wise arithmetic mean of matching checkpoints.

    All inputs must carry the same tensor names with the same dims;
    mismatches are errors, never silently intersected. Tensor order
    follows the first checkpoint.
    """
    if len(checkpoints) < 2:
        raise EngineError(f"need at least 2 checkpoints to average, got {len(checkpoints)}")
    first = checkpoints[0]
    names = set(first.names())
    for i, ckpt in enumerate(checkpoints[1:], start=1):
        other = set(ckpt.names())
        if other != names:
            diff = sorted(names.symmetric_difference(other))
            raise EngineError(f"checkpoint {i} tensor names differ: {diff}")
        for name in names:
            if ckpt[name].dims != first[name].dims:
                raise EngineError(
                    f"tensor {name!r} shape mismatch: "
                    f"{first[name].dims} vs {ckpt[name].dims} in checkpoint {i}"
                )

    out = Checkpoint()
    for entry in first:
        acc = np.zeros(entry.dims, dtype=np.float64)
        for ckpt in checkpoints:
            acc += ckpt[entry.name].array
        acc /= len(checkpoints)
        out.add(TensorEntry(name=entry.name, array=acc.astype(np.float32)))
    return out
