import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hyperrom import store


def test_empty_matrix_round_trip(tmp_path):
    M = np.zeros((0, 0))
    store.write_block(tmp_path / "e.hrmb", M)
    out = store.read_block(tmp_path / "e.hrmb")
    assert out.shape == (0, 0)
    assert (tmp_path / "e.hrmb").stat().st_size == 24


def test_nonfinite_round_trip_bitwise(tmp_path):
    M = np.array([[np.nan, np.inf], [-np.inf, -0.0], [5e-324, 1.0]])
    store.write_block(tmp_path / "m.hrmb", M)
    out = store.read_block(tmp_path / "m.hrmb")
    assert out.shape == (3, 2)
    assert out.tobytes() == M.tobytes()


def test_header_layout():
    buf = store.encode_block(np.arange(6.0).reshape(2, 3))
    assert buf[:6] == b"HRMB1\0"
    assert buf[6] == 1 and buf[7] == 1
    assert int.from_bytes(buf[8:16], "little") == 2
    assert int.from_bytes(buf[16:24], "little") == 3
    np.testing.assert_array_equal(np.frombuffer(buf[24:], "<f8"), np.arange(6.0))


def test_integer_blocks():
    idx = np.array([[3, -1], [7, 2**40]], dtype=np.int64)
    out = store.decode_block(store.encode_block(idx))
    assert out.dtype == np.int64
    np.testing.assert_array_equal(out, idx)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 6), st.integers(0, 6)),
              elements=st.floats(allow_nan=True, allow_infinity=True)))
def test_round_trip_property(M):
    out = store.decode_block(store.encode_block(M))
    assert out.shape == M.shape
    assert out.tobytes() == np.ascontiguousarray(M).tobytes()


def test_distinct_error_kinds(tmp_path):
    buf = store.encode_block(np.ones((2, 2)))
    with pytest.raises(store.TruncatedBlockError):
        store.decode_block(buf[:-1])
    with pytest.raises(store.TruncatedBlockError):
        store.decode_block(buf[:10])
    with pytest.raises(store.MagicMismatchError):
        store.decode_block(b"XXXXX1" + buf[6:])

    man = store.write_artifact(tmp_path, "test", {"A": np.eye(3)}, params={"d": 3})
    store.verify(man.path)
    p = tmp_path / "A.hrmb"
    raw = bytearray(p.read_bytes())
    raw[30] ^= 0x01  # flip one payload bit
    p.write_bytes(bytes(raw))
    with pytest.raises(store.HashMismatchError):
        store.verify(man.path)
    with pytest.raises(store.HashMismatchError):
        store.read_manifest(tmp_path).load("A")
    p.unlink()
    with pytest.raises(store.MissingArtifactError):
        store.verify(tmp_path)


def test_manifest_round_trip_and_determinism(tmp_path):
    arrays_ = {"U": np.random.default_rng(0).normal(size=(5, 4)), "ids": np.arange(4), "v": np.ones(3)}
    a = store.write_artifact(tmp_path / "a", "snapshots", arrays_, params={"tol": 1e-8}, seeds={"paths": 7})
    b = store.write_artifact(tmp_path / "b", "snapshots", arrays_, params={"tol": 1e-8}, seeds={"paths": 7})
    assert a.path.read_bytes() == b.path.read_bytes()
    doc = json.loads(a.path.read_text())
    assert doc["schema_version"] == store.SCHEMA_VERSION
    assert set(doc["files"]) == {"U", "ids", "v"}
    man = store.read_manifest(tmp_path / "a")
    np.testing.assert_array_equal(man.load("U"), arrays_["U"])
    assert man.load("v").shape == (3,)
    assert man.load("ids").dtype == np.int64


def test_not_a_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text('{"hello": 1}')
    with pytest.raises(store.StoreError):
        store.read_manifest(tmp_path)


def test_csv_rfc4180():
    text = store.csv_text([{"a": 'x,"y"', "b": 1.5}, {"a": None, "b": 2}], ["a", "b"])
    assert text == 'a,b\r\n"x,""y""",1.5\r\n,2\r\n'
