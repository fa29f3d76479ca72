"""Binary persistence and validation of embedding sets.

File layout (UEMB), all integers little-endian:

    magic    4 bytes   "UEMB"
    version  u32       currently 1
    n        u64       row count (0 is legal)
    d        u32       embedding dimension (must be > 0)
    flags    u32       bit 0: rows are L2-normalized; all other bits zero
    data     n*d IEEE-754 binary32, row-major
    ids      n records, each: u16 byte length + UTF-8 bytes

Ids live in-file so a single artifact is self-describing. Floats are
binary32 because that is what the upstream encoders emit and it halves
storage versus binary64. Round trips are bitwise on the float payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import EngineError, FormatError

MAGIC = b"UEMB"
VERSION = 1
NORM_TOL = 1e-4
_HEADER = struct.Struct("<4sIQII")
_ID_LEN = struct.Struct("<H")
_FLAG_NORMALIZED = 0x1
_MAX_ID_BYTES = 0xFFFF


@dataclass(frozen=True)
class EmbeddingSet:
    """Ids plus an n x d float32 matrix, with an L2-normalization flag.

    Immutable after construction (the matrix is marked read-only), so a
    set can be shared freely across threads. Construction only enforces
    shape-level sanity; content-level invariants (distinct ids, finite
    values, unit norms when flagged) are checked by :func:`validate` and
    enforced at the file boundary.
    """

    ids: tuple[str, ...]
    data: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise EngineError(f"embedding data must be 2-D, got shape {data.shape}")
        if data.shape[1] == 0:
            raise EngineError("embedding dimension must be positive (d=0 is illegal)")
        ids = tuple(self.ids)
        if len(ids) != data.shape[0]:
            raise EngineError(
                f"id count {len(ids)} does not match row count {data.shape[0]}"
            )
        data = data.copy() if data is self.data else data
        data.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "data", data)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row(self, id_: str) -> np.ndarray:
        """Look up one row by id (linear scan; convenience for small sets)."""
        try:
            return self.data[self.ids.index(id_)]
        except ValueError:
            raise KeyError(id_) from None


@dataclass(frozen=True)
class Violation:
    """One invariant violation, locating the offending row where possible."""

    message: str
    row: int | None = None
    id: str | None = None

    def __str__(self) -> str:
        where = ""
        if self.row is not None:
            where = f" (row {self.row}" + (f", id {self.id!r})" if self.id is not None else ")")
        return self.message + where


def validate(emb: EmbeddingSet) -> list[Violation]:
    """List every invariant violation in a set; an empty list means clean.

    Violations are data, not errors: a dirty set can always be inspected.
    """
    out: list[Violation] = []
    seen: dict[str, int] = {}
    for i, id_ in enumerate(emb.ids):
        if id_ in seen:
            out.append(Violation(f"duplicate id (first at row {seen[id_]})", row=i, id=id_))
        else:
            seen[id_] = i
    finite = np.isfinite(emb.data)
    if not finite.all():
        for i in np.flatnonzero(~finite.all(axis=1)):
            out.append(Violation("non-finite value", row=int(i), id=emb.ids[i]))
    if emb.normalized and emb.count:
        norms = np.linalg.norm(emb.data.astype(np.float64), axis=1)
        for i in np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL):
            out.append(
                Violation(
                    f"normalized flag set but row norm is {norms[i]:.6g}",
                    row=int(i),
                    id=emb.ids[i],
                )
            )
    return out


def write_embeddings(emb: EmbeddingSet, sink: BinaryIO) -> int:
    """Write a set in the UEMB layout; returns the number of bytes written.

    The set must satisfy its invariants; the first violation aborts the
    write with an error naming the offending row.
    """
    violations = validate(emb)
    if violations:
        raise EngineError(f"refusing to write invalid set: {violations[0]}")
    encoded_ids = []
    for i, id_ in enumerate(emb.ids):
        raw = id_.encode("utf-8")
        if len(raw) > _MAX_ID_BYTES:
            raise EngineError(f"id at row {i} exceeds {_MAX_ID_BYTES} UTF-8 bytes")
        encoded_ids.append(raw)

    flags = _FLAG_NORMALIZED if emb.normalized else 0
    written = sink.write(_HEADER.pack(MAGIC, VERSION, emb.count, emb.dim, flags))
    written += sink.write(np.ascontiguousarray(emb.data, dtype="<f4").tobytes())
    for raw in encoded_ids:
        written += sink.write(_ID_LEN.pack(len(raw)) + raw)
    return written


def read_embeddings(source: BinaryIO) -> EmbeddingSet:
    """Read a UEMB stream back into a validated set.

    Every malformation is reported with the byte offset at which it was
    detected. write-then-read is value identity; read-then-write
    reproduces the input bytes exactly.
    """
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        buf = source.read(n)
        if len(buf) != n:
            raise FormatError(
                f"truncated payload at offset {offset}: "
                f"expected {n} bytes for {what}, got {len(buf)}"
            )
        offset += n
        return buf

    header = take(_HEADER.size, "header")
    magic, version, n, d, flags = _HEADER.unpack(header)
    if magic != MAGIC:
        raise FormatError("bad magic at offset 0")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    if d == 0:
        raise FormatError("dimension 0 at offset 16")
    if flags & ~_FLAG_NORMALIZED:
        raise FormatError(f"unknown flag bits 0x{flags:x} at offset 20")

    matrix_offset = offset
    raw = take(4 * n * d, "float payload")
    data = np.frombuffer(raw, dtype="<f4").reshape(n, d)
    bad = ~np.isfinite(data)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise FormatError(
            f"non-finite value in row {r} at offset {matrix_offset + 4 * (r * d + c)}"
        )

    ids: list[str] = []
    seen: dict[str, int] = {}
    for i in range(n):
        record_offset = offset
        (length,) = _ID_LEN.unpack(take(_ID_LEN.size, f"id length {i}"))
        try:
            id_ = take(length, f"id bytes {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 in id {i} at offset {record_offset + 2}") from exc
        if id_ in seen:
            raise FormatError(
                f"duplicate id {id_!r} at offset {record_offset} (first at row {seen[id_]})"
            )
        seen[id_] = i
        ids.append(id_)

    if source.read(1):
        raise FormatError(f"declared length mismatch: trailing bytes at offset {offset}")

    emb = EmbeddingSet(ids=tuple(ids), data=data, normalized=bool(flags & _FLAG_NORMALIZED))
    violations = validate(emb)
    if violations:
        v = violations[0]
        raise FormatError(f"invariant violation in payload: {v}")
    return emb


def save_embeddings(emb: EmbeddingSet, path: str | Path) -> int:
    with open(path, "wb") as fh:
        return write_embeddings(emb, fh)


def load_embeddings(path: str | Path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        return read_embeddings(fh)
