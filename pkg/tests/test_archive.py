import struct

import numpy as np
import pytest

from reinead import archive


def sample_arrays():
    rng = np.random.default_rng(0)
    return {
        "enc.w": rng.normal(size=(3, 3, 3, 8)).astype(np.float32),
        "head.b": np.array([0.0, -0.0, np.float32(1e-38)], dtype=np.float32),
        "labels": np.arange(5, dtype=np.int32),
        "scalar": np.float32(2.5),
    }


def test_round_trip_is_bit_exact(tmp_path):
    arrays = sample_arrays()
    path = tmp_path / "ck.bin"
    archive.save(path, arrays, {"kind": "test", "d_b": 64})
    back, meta = archive.load(path)
    assert meta == {"kind": "test", "d_b": 64}
    for k, v in arrays.items():
        assert back[k].tobytes() == np.asarray(v).tobytes()
        assert back[k].shape == np.shape(v)


def test_save_load_save_byte_identical(tmp_path):
    blob = archive.dumps(sample_arrays(), {"a": 1})
    arrays, meta = archive.loads(blob)
    assert archive.dumps(arrays, meta) == blob


def test_newer_version_rejected():
    blob = bytearray(archive.dumps(sample_arrays()))
    blob[8:12] = struct.pack("<I", archive.VERSION + 1)
    with pytest.raises(archive.UnsupportedVersion, match="newer"):
        archive.loads(bytes(blob))


def test_corruption_reports_offset():
    blob = bytearray(archive.dumps(sample_arrays()))
    blob[40] ^= 0xFF
    with pytest.raises(archive.ArchiveError, match="offset|bytes"):
        archive.loads(bytes(blob))
    with pytest.raises(archive.ArchiveError, match="offset"):
        archive.loads(bytes(blob[:30]))


def test_little_endian_float32_payload():
    blob = archive.dumps({"x": np.array([1.0], dtype=np.float32)})
    assert struct.pack("<f", 1.0) in blob
