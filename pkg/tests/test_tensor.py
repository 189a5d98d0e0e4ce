import struct

import numpy as np
import pytest

from kvgeom import KeyTensor, ScoreTensor, ValidationError, load_kvt, save_kvt, slice_seq

from conftest import kt, random_tensor, rng


class TestKeyTensor:
    def test_shape_properties(self, tiny_tensor):
        assert (tiny_tensor.batch, tiny_tensor.heads) == (2, 3)
        assert (tiny_tensor.seq_len, tiny_tensor.head_dim) == (10, 4)

    def test_rejects_nan(self):
        bad = np.zeros((1, 1, 2, 2))
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(ValidationError, match="NaN"):
            KeyTensor(bad)

    def test_rejects_inf(self):
        bad = np.full((1, 1, 2, 2), np.inf)
        with pytest.raises(ValidationError):
            KeyTensor(bad)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValidationError, match="4 axes"):
            KeyTensor(np.zeros((2, 2)))

    def test_rejects_empty_axis(self):
        with pytest.raises(ValidationError, match=">= 1"):
            KeyTensor(np.zeros((1, 1, 0, 4)))

    def test_immutable(self, tiny_tensor):
        with pytest.raises(ValueError):
            tiny_tensor.data[0, 0, 0, 0] = 1.0

    def test_does_not_freeze_caller_array(self):
        src = np.zeros((1, 1, 2, 2), dtype=np.float32)
        KeyTensor(src)
        src[0, 0, 0, 0] = 5.0  # caller's array stays writable

    def test_equality(self):
        a = kt([[1.0, 2.0], [3.0, 4.0]])
        b = kt([[1.0, 2.0], [3.0, 4.0]])
        c = kt([[1.0, 2.0], [3.0, 5.0]])
        assert a == b
        assert a != c


class TestKvtFormat:
    def test_round_trip_bit_exact(self, tmp_path, tiny_tensor):
        path = tmp_path / "t.kvt"
        save_kvt(tiny_tensor, path)
        assert load_kvt(path) == tiny_tensor

    def test_save_deterministic_bytes(self, tmp_path, tiny_tensor):
        p1, p2 = tmp_path / "a.kvt", tmp_path / "b.kvt"
        save_kvt(tiny_tensor, p1)
        save_kvt(tiny_tensor, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_layout(self, tmp_path):
        t = random_tensor(0, batch=2, heads=3, seq=5, dim=7)
        path = tmp_path / "t.kvt"
        save_kvt(t, path)
        blob = path.read_bytes()
        assert blob[:4] == b"KVT1"
        assert struct.unpack_from("<IIII", blob, 4) == (2, 3, 5, 7)
        assert len(blob) == 20 + 2 * 3 * 5 * 7 * 4

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.kvt"
        path.write_bytes(b"XXXX" + struct.pack("<IIII", 1, 1, 1, 1) + b"\x00" * 4)
        with pytest.raises(ValidationError, match="magic"):
            load_kvt(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.kvt"
        path.write_bytes(b"KVT1" + struct.pack("<IIII", 1, 1, 2, 2) + b"\x00" * 12)
        with pytest.raises(ValidationError, match="length"):
            load_kvt(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "long.kvt"
        path.write_bytes(b"KVT1" + struct.pack("<IIII", 1, 1, 1, 1) + b"\x00" * 8)
        with pytest.raises(ValidationError, match="length"):
            load_kvt(path)

    def test_zero_dim_header(self, tmp_path):
        path = tmp_path / "zero.kvt"
        path.write_bytes(b"KVT1" + struct.pack("<IIII", 1, 0, 2, 2))
        with pytest.raises(ValidationError, match="dims"):
            load_kvt(path)

    def test_nan_payload_rejected(self, tmp_path):
        path = tmp_path / "nan.kvt"
        payload = np.array([1.0, np.nan], dtype="<f4").tobytes()
        path.write_bytes(b"KVT1" + struct.pack("<IIII", 1, 1, 2, 1) + payload)
        with pytest.raises(ValidationError, match="NaN"):
            load_kvt(path)

    def test_save_revalidates_payload(self, tmp_path):
        t = kt([[1.0, 2.0]])
        hacked = np.array(t.data)
        hacked[0, 0, 0, 0] = np.nan
        object.__setattr__(t, "data", hacked)  # bypass constructor checks
        with pytest.raises(ValidationError, match="non-finite"):
            save_kvt(t, tmp_path / "x.kvt")

    def test_missing_file_is_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_kvt(tmp_path / "nope.kvt")

    def test_unwritable_path_is_oserror(self, tmp_path, tiny_tensor):
        with pytest.raises(OSError):
            save_kvt(tiny_tensor, tmp_path)  # directory, not a file


class TestSliceSeq:
    def test_full_range_identity(self, tiny_tensor):
        assert slice_seq(tiny_tensor, 0, tiny_tensor.seq_len) == tiny_tensor

    def test_single_row(self, tiny_tensor):
        s = slice_seq(tiny_tensor, 3, 4)
        assert s.seq_len == 1
        assert np.array_equal(s.data[:, :, 0, :], tiny_tensor.data[:, :, 3, :])

    def test_chaining_matches_index_arithmetic(self, tiny_tensor):
        # slice(0,4) then slice(2,4) must equal slice(2,4) of the original
        chained = slice_seq(slice_seq(tiny_tensor, 0, 4), 2, 4)
        direct = slice_seq(tiny_tensor, 2, 4)
        assert chained == direct
        oracle = tiny_tensor.data[:, :, 2:4, :]
        assert np.array_equal(chained.data, oracle)

    def test_preserves_other_axes(self, tiny_tensor):
        s = slice_seq(tiny_tensor, 1, 5)
        assert (s.batch, s.heads, s.head_dim) == (
            tiny_tensor.batch,
            tiny_tensor.heads,
            tiny_tensor.head_dim,
        )

    def test_no_memory_sharing(self, tiny_tensor):
        s = slice_seq(tiny_tensor, 0, 4)
        assert not np.shares_memory(s.data, tiny_tensor.data)

    @pytest.mark.parametrize("start,end", [(2, 2), (3, 1), (0, 99), (-1, 3)])
    def test_bounds_errors(self, tiny_tensor, start, end):
        with pytest.raises(ValidationError):
            slice_seq(tiny_tensor, start, end)


class TestScoreTensor:
    def test_shape_and_match(self, tiny_tensor):
        s = ScoreTensor(np.zeros((2, 3, 10)))
        assert s.matches(tiny_tensor)
        assert not s.matches(random_tensor(0, seq=4))

    def test_rejects_nan(self):
        bad = np.zeros((1, 1, 3))
        bad[0, 0, 1] = np.nan
        with pytest.raises(ValidationError):
            ScoreTensor(bad)

    def test_to_key_tensor_round_trip(self, tmp_path):
        s = ScoreTensor(rng(3).normal(size=(2, 2, 5)))
        t = s.to_key_tensor()
        assert t.shape == (2, 2, 5, 1)
        path = tmp_path / "s.kvt"
        save_kvt(t, path)
        back = load_kvt(path)
        assert np.array_equal(back.data[..., 0], s.data.astype(np.float32))

    def test_rows_enumeration(self):
        s = ScoreTensor(np.arange(6, dtype=np.float64).reshape(1, 2, 3))
        rows = list(s.rows())
        assert rows[0] == (0, 0, 0, 0.0)
        assert rows[-1] == (0, 1, 2, 5.0)
        assert len(rows) == 6
