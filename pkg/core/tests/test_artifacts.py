"""
Tests for the shared artifact writers and readers.
"""
import json
import math

import numpy as np
import pytest

from core.utils.artifacts import dumps_json, ensure_output_dir, read_blob, read_json, write_blob, write_csv, write_json


def test_floats_keep_seventeen_significant_digits(tmp_path):
    value = 0.1 + 0.2
    path = write_json(tmp_path / "x.json", {"v": value, "n": 3, "ok": True})
    assert read_json(path)["v"] == value
    assert "0.30000000000000004" in path.read_text(encoding="utf-8")


def test_numpy_values_and_non_finite_floats():
    text = dumps_json({"a": np.arange(3), "b": np.float64(1.5), "c": np.int64(2), "d": math.inf, "e": np.bool_(True)})
    data = json.loads(text)
    assert data == {"a": [0, 1, 2], "b": 1.5, "c": 2, "d": None, "e": True}


def test_integral_float_keeps_decimal_point():
    assert json.loads(dumps_json([2.0])) == [2.0]
    assert "2.0" in dumps_json([2.0])


def test_unsupported_object():
    with pytest.raises(TypeError):
        dumps_json({"x": object()})


def test_csv_has_header_and_unix_line_ends(tmp_path):
    path = write_csv(tmp_path / "t.csv", ["a", "b"], [[1, 2.5], [3, 4]])
    assert path.read_bytes() == b"a,b\n1,2.5\n3,4\n"


def test_blob_is_little_endian_float64(tmp_path):
    array = np.arange(6, dtype=np.float64).reshape(2, 3)
    path = write_blob(tmp_path / "a.bin", array)
    assert path.read_bytes() == array.astype("<f8").tobytes()
    np.testing.assert_array_equal(read_blob(path, (2, 3)), array)


def test_blob_size_mismatch_and_missing(tmp_path):
    path = write_blob(tmp_path / "a.bin", np.zeros(5))
    with pytest.raises(ValueError, match="5 values"):
        read_blob(path, (2, 3))
    with pytest.raises(FileNotFoundError):
        read_blob(tmp_path / "missing.bin")


def test_output_dir_is_created(tmp_path):
    target = ensure_output_dir(tmp_path / "a" / "b")
    assert target.is_dir()
