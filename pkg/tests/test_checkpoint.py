"""Unit tests for the binary checkpoint container."""

import numpy as np
import pytest

from disentda.checkpoint import MAGIC, load_checkpoint, save_checkpoint


def _entries():
    rng = np.random.default_rng(0)
    return {
        "param.w": rng.normal(size=(3, 4)),
        "param.b": rng.normal(size=5),
        "bank": rng.normal(size=(6, 2)),
        "meta.step": 42.0,
        "meta.rate": 0.01,
    }


def test_round_trip(tmp_path):
    path = tmp_path / "ck.bin"
    entries = _entries()
    save_checkpoint(path, entries)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(entries)
    for name, value in entries.items():
        got = loaded[name]
        np.testing.assert_array_equal(got, np.asarray(value, dtype=np.float64))
        assert got.dtype == np.float64
    assert loaded["meta.step"].shape == ()
    assert float(loaded["meta.step"]) == 42.0


def test_serialization_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(a, _entries())
    save_checkpoint(b, _entries())
    assert a.read_bytes() == b.read_bytes()


def test_file_starts_with_magic(tmp_path):
    path = tmp_path / "ck.bin"
    save_checkpoint(path, {"x": 1.0})
    assert path.read_bytes()[:4] == MAGIC


def test_malformed_files_rejected(tmp_path):
    path = tmp_path / "ck.bin"
    save_checkpoint(path, _entries())
    raw = path.read_bytes()

    bad_magic = tmp_path / "magic.bin"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        load_checkpoint(bad_magic)

    bad_version = tmp_path / "version.bin"
    bad_version.write_bytes(raw[:4] + b"\x63\x00\x00\x00" + raw[8:])
    with pytest.raises(ValueError):
        load_checkpoint(bad_version)

    truncated = tmp_path / "short.bin"
    truncated.write_bytes(raw[:-5])
    with pytest.raises(ValueError):
        load_checkpoint(truncated)

    trailing = tmp_path / "long.bin"
    trailing.write_bytes(raw + b"\x00" * 3)
    with pytest.raises(ValueError):
        load_checkpoint(trailing)


def test_duplicate_entries_rejected(tmp_path):
    import struct

    path = tmp_path / "dup.bin"
    one = np.asarray(1.0, dtype="<f8")
    entry = struct.pack("<I", 1) + b"x" + struct.pack("<I", 0) + one.tobytes()
    path.write_bytes(MAGIC + struct.pack("<II", 1, 2) + entry + entry)
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_non_ascii_names_round_trip(tmp_path):
    path = tmp_path / "ck.bin"
    save_checkpoint(path, {"παράμετρος": np.ones(2)})
    assert "παράμετρος" in load_checkpoint(path)
