"""Binary container round-trips and corruption detection."""

import numpy as np
import pytest

from refgame.checkpoint import MAGIC, load_arrays, save_arrays


def test_roundtrip_preserves_names_shapes_values(tmp_path):
    arrays = {
        "w": np.arange(12.0).reshape(3, 4),
        "b": np.array([-1.5]),
        "scalarish": np.float64(3.25),
        "deep": np.linspace(0, 1, 24).reshape(2, 3, 4),
    }
    path = tmp_path / "a.ckpt"
    save_arrays(path, arrays)
    back = load_arrays(path)
    assert set(back) == set(arrays)
    for name, arr in arrays.items():
        np.testing.assert_array_equal(back[name], np.asarray(arr, dtype=np.float64))
        assert back[name].dtype == np.float64


def test_roundtrip_is_byte_stable(tmp_path):
    arrays = {"x": np.random.default_rng(3).normal(size=(5, 5))}
    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    save_arrays(p1, arrays)
    save_arrays(p2, arrays)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTCKPT" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_arrays(path)


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "v9.ckpt"
    save_arrays(path, {"x": np.zeros(2)})
    blob = bytearray(path.read_bytes())
    blob[len(MAGIC)] = 9  # bump the version field
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="version"):
        load_arrays(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "trail.ckpt"
    save_arrays(path, {"x": np.zeros(2)})
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(ValueError, match="trailing"):
        load_arrays(path)


def test_empty_container(tmp_path):
    path = tmp_path / "empty.ckpt"
    save_arrays(path, {})
    assert load_arrays(path) == {}
