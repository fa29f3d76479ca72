"""UEMB container: byte layout, round trips, and invariant validation."""

import io
import struct

import numpy as np
import pytest

from uniembed.errors import EngineError, FormatError
from uniembed.store import (
    EmbeddingSet,
    read_embeddings,
    validate,
    write_embeddings,
)

# Hand-encoded per the format table: header (magic, version=1, n=1 u64,
# d=2, flags=0), one row [1.0, 2.0] as binary32 LE, one id record "a".
GOLDEN_1x2 = bytes.fromhex(
    "55454d42"
    "01000000"
    "0100000000000000"
    "02000000"
    "00000000"
    "0000803f" "00000040"
    "0100" "61"
)


def roundtrip(emb: EmbeddingSet) -> tuple[bytes, EmbeddingSet]:
    buf = io.BytesIO()
    n = write_embeddings(emb, buf)
    assert n == len(buf.getvalue())
    buf.seek(0)
    return buf.getvalue(), read_embeddings(buf)


class TestWrite:
    def test_golden_bytes_1x2(self):
        emb = EmbeddingSet(ids=("a",), data=np.array([[1.0, 2.0]], dtype=np.float32))
        raw, _ = roundtrip(emb)
        assert raw == GOLDEN_1x2
        assert len(raw) == 35

    def test_empty_set_is_header_only(self):
        emb = EmbeddingSet(ids=(), data=np.empty((0, 4), dtype=np.float32))
        raw, back = roundtrip(emb)
        assert len(raw) == 24
        assert back.count == 0 and back.dim == 4

    def test_duplicate_ids_rejected(self):
        emb = EmbeddingSet(ids=("a", "a"), data=np.zeros((2, 3), dtype=np.float32))
        with pytest.raises(EngineError, match="duplicate id"):
            write_embeddings(emb, io.BytesIO())

    def test_nonfinite_rejected(self):
        emb = EmbeddingSet(ids=("a",), data=np.array([[np.nan, 1.0]], dtype=np.float32))
        with pytest.raises(EngineError, match="non-finite"):
            write_embeddings(emb, io.BytesIO())

    def test_oversized_id_rejected(self):
        emb = EmbeddingSet(ids=("x" * 70000,), data=np.zeros((1, 2), dtype=np.float32))
        with pytest.raises(EngineError, match="UTF-8 bytes"):
            write_embeddings(emb, io.BytesIO())


class TestRead:
    def test_golden_roundtrip(self):
        back = read_embeddings(io.BytesIO(GOLDEN_1x2))
        assert back.ids == ("a",)
        assert back.normalized is False
        np.testing.assert_array_equal(back.data, np.array([[1.0, 2.0]], dtype=np.float32))

    def test_bad_magic_names_offset_zero(self):
        with pytest.raises(FormatError, match="bad magic at offset 0"):
            read_embeddings(io.BytesIO(b"XXXX" + GOLDEN_1x2[4:]))

    def test_unsupported_version(self):
        raw = GOLDEN_1x2[:4] + struct.pack("<I", 9) + GOLDEN_1x2[8:]
        with pytest.raises(FormatError, match="unsupported version 9 at offset 4"):
            read_embeddings(io.BytesIO(raw))

    def test_truncated_matrix(self):
        with pytest.raises(FormatError, match="truncated payload"):
            read_embeddings(io.BytesIO(GOLDEN_1x2[:28]))

    def test_truncated_id_record(self):
        with pytest.raises(FormatError, match="truncated payload"):
            read_embeddings(io.BytesIO(GOLDEN_1x2[:-1]))

    def test_trailing_bytes_rejected(self):
        with pytest.raises(FormatError, match="trailing bytes at offset 35"):
            read_embeddings(io.BytesIO(GOLDEN_1x2 + b"\x00"))

    def test_duplicate_ids_in_file(self):
        emb = EmbeddingSet(ids=("a", "b"), data=np.ones((2, 2), dtype=np.float32))
        buf = io.BytesIO()
        write_embeddings(emb, buf)
        raw = bytearray(buf.getvalue())
        raw[-1] = ord("a")  # second id record becomes "a" again
        with pytest.raises(FormatError, match="duplicate id 'a'"):
            read_embeddings(io.BytesIO(bytes(raw)))

    def test_nonfinite_payload_names_offset(self):
        raw = bytearray(GOLDEN_1x2)
        raw[28:32] = struct.pack("<f", np.inf)  # second float of the row
        with pytest.raises(FormatError, match="offset 28"):
            read_embeddings(io.BytesIO(bytes(raw)))

    def test_norm_flag_enforced_on_read(self):
        emb = EmbeddingSet(ids=("a",), data=np.array([[0.6, 0.8]], dtype=np.float32), normalized=True)
        buf = io.BytesIO()
        write_embeddings(emb, buf)
        raw = bytearray(buf.getvalue())
        raw[24:28] = struct.pack("<f", 2.0)  # break the unit norm, keep the flag
        with pytest.raises(FormatError, match="row norm"):
            read_embeddings(io.BytesIO(bytes(raw)))


class TestRoundTripProperty:
    def test_random_sets_bitwise(self):
        rng = np.random.default_rng(42)
        for trial in range(20):
            n = int(rng.integers(0, 40))
            d = int(rng.integers(1, 33))
            data = rng.standard_normal((n, d)).astype(np.float32)
            ids = tuple(f"img/{trial}/{i:04d}.jpg" for i in range(n))
            emb = EmbeddingSet(ids=ids, data=data)
            raw, back = roundtrip(emb)
            assert back.ids == emb.ids
            assert back.data.tobytes() == emb.data.tobytes()
            # read-then-write reproduces the bytes exactly
            buf = io.BytesIO()
            write_embeddings(back, buf)
            assert buf.getvalue() == raw

    def test_unicode_ids(self):
        emb = EmbeddingSet(ids=("яблоко", "林檎"), data=np.eye(2, dtype=np.float32), normalized=True)
        _, back = roundtrip(emb)
        assert back.ids == ("яблоко", "林檎")
        assert back.normalized is True


class TestValidate:
    def test_clean_normalized_set(self):
        data = np.array([[0.6, 0.8], [1.0, 0.0]], dtype=np.float32)
        emb = EmbeddingSet(ids=("a", "b"), data=data, normalized=True)
        assert validate(emb) == []

    def test_norm_violation_names_row(self):
        data = np.array([[0.6, 0.8], [2.0, 0.0]], dtype=np.float32)
        emb = EmbeddingSet(ids=("a", "b"), data=data, normalized=True)
        report = validate(emb)
        assert len(report) == 1
        assert report[0].row == 1 and report[0].id == "b"

    def test_nan_violation(self):
        data = np.array([[np.nan, 0.0]], dtype=np.float32)
        report = validate(EmbeddingSet(ids=("a",), data=data))
        assert len(report) == 1
        assert "non-finite" in report[0].message

    def test_duplicate_id_violation(self):
        emb = EmbeddingSet(ids=("a", "a"), data=np.ones((2, 2), dtype=np.float32))
        report = validate(emb)
        assert any("duplicate" in v.message for v in report)

    def test_validate_iff_invariants(self):
        # empty report exactly when all type invariants hold
        rng = np.random.default_rng(7)
        data = rng.standard_normal((5, 3)).astype(np.float32)
        unit = data / np.linalg.norm(data, axis=1, keepdims=True)
        assert validate(EmbeddingSet(ids=tuple("abcde"), data=unit, normalized=True)) == []
        assert validate(EmbeddingSet(ids=tuple("abcde"), data=data, normalized=True)) != []


class TestConstruction:
    def test_zero_dim_illegal(self):
        with pytest.raises(EngineError, match="d=0"):
            EmbeddingSet(ids=(), data=np.empty((0, 0), dtype=np.float32))

    def test_length_mismatch(self):
        with pytest.raises(EngineError, match="id count"):
            EmbeddingSet(ids=("a",), data=np.zeros((2, 2), dtype=np.float32))

    def test_immutable_data(self):
        emb = EmbeddingSet(ids=("a",), data=np.zeros((1, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            emb.data[0, 0] = 1.0
