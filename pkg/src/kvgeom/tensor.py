"""Tensor containers and the KVT1 binary interchange format.

A KVT1 file is: 4 magic bytes ``KVT1``, four little-endian uint32 header
fields (batch, heads, seq_len, head_dim), then batch*heads*seq_len*head_dim
IEEE-754 binary32 little-endian payload values in row-major
(batch, head, seq, dim) order. No padding, no footer. The file layout is the
interchange contract; in-memory arrays are native-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

MAGIC = b"KVT1"
_HEADER = struct.Struct("<4sIIII")


def _frozen_f32(data) -> np.ndarray:
    # always copy so freezing never mutates caller-owned arrays
    arr = np.array(data, dtype=np.float32, order="C")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class KeyTensor:
    """Immutable (batch, heads, seq_len, head_dim) float32 tensor.

    Holds key, value or query vectors; every (batch, head) slice is an
    independent seq_len x head_dim matrix. All entries must be finite and
    every axis must have extent >= 1.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = _frozen_f32(self.data)
        if arr.ndim != 4:
            raise ValidationError(f"expected 4 axes (batch, heads, seq, dim), got {arr.ndim}")
        if min(arr.shape) < 1:
            raise ValidationError(f"all axes must be >= 1, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("tensor contains NaN or Inf")
        object.__setattr__(self, "data", arr)

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def heads(self) -> int:
        return self.data.shape[1]

    @property
    def seq_len(self) -> int:
        return self.data.shape[2]

    @property
    def head_dim(self) -> int:
        return self.data.shape[3]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def matrix(self, batch: int, head: int) -> np.ndarray:
        """The (seq_len, head_dim) float64 matrix for one (batch, head) pair."""
        return self.data[batch, head].astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KeyTensor):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class ScoreTensor:
    """Per-token scores aligned with a KeyTensor's (batch, heads, seq) axes."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C")
        if arr.ndim != 3:
            raise ValidationError(f"expected 3 axes (batch, heads, seq), got {arr.ndim}")
        if min(arr.shape) < 1:
            raise ValidationError(f"all axes must be >= 1, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("score tensor contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def heads(self) -> int:
        return self.data.shape[1]

    @property
    def seq_len(self) -> int:
        return self.data.shape[2]

    def matches(self, t: KeyTensor) -> bool:
        return self.data.shape == t.data.shape[:3]

    def to_key_tensor(self) -> KeyTensor:
        """Repack as a KeyTensor with head_dim = 1 (for KVT1 serialization)."""
        return KeyTensor(self.data[..., None])

    def rows(self):
        """Yield (batch, head, token, score) rows in index order."""
        b, h, s = self.data.shape
        for bi in range(b):
            for hi in range(h):
                for ti in range(s):
                    yield bi, hi, ti, float(self.data[bi, hi, ti])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScoreTensor):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)


def save_kvt(t: KeyTensor, path) -> None:
    """Write a KeyTensor to `path` in KVT1 format (deterministic bytes)."""
    if not np.isfinite(t.data).all():
        raise ValidationError("refusing to write non-finite payload")
    header = _HEADER.pack(MAGIC, t.batch, t.heads, t.seq_len, t.head_dim)
    payload = t.data.astype("<f4", copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_kvt(path) -> KeyTensor:
    """Read a KVT1 file back into a KeyTensor.

    Raises ValidationError on bad magic, zero header dims, payload length
    mismatch, or non-finite payload values.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ValidationError(f"file too short for KVT1 header: {len(blob)} bytes")
    magic, batch, heads, seq_len, head_dim = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValidationError(f"bad magic {magic!r}, expected {MAGIC!r}")
    dims = (batch, heads, seq_len, head_dim)
    if min(dims) < 1:
        raise ValidationError(f"header dims must all be >= 1, got {dims}")
    expected = batch * heads * seq_len * head_dim * 4
    actual = len(blob) - _HEADER.size
    if actual != expected:
        raise ValidationError(f"payload length mismatch: expected {expected} bytes, got {actual}")
    flat = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    if not np.isfinite(flat).all():
        raise ValidationError("payload contains NaN or Inf")
    return KeyTensor(flat.reshape(dims))


def slice_seq(t: KeyTensor, start: int, end: int) -> KeyTensor:
    """Copy of the token range [start, end) along the sequence axis."""
    if start < 0 or start >= end or end > t.seq_len:
        raise ValidationError(
            f"invalid slice [{start}, {end}) for seq_len {t.seq_len}"
        )
    return KeyTensor(t.data[:, :, start:end, :])
