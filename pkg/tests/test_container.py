import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from cvdrppg.container import (ContainerError, decode_checkpoint, decode_tensor, encode_checkpoint,
                               encode_tensor, load_checkpoint, load_tensor, save_checkpoint,
                               save_tensor)


def test_header_layout():
    blob = encode_tensor(np.arange(6.0).reshape(2, 3))
    assert blob[:4] == b"MST1"
    assert blob[4] == 1 and blob[5] == 2
    assert struct.unpack_from("<2I", blob, 6) == (2, 3)
    assert np.frombuffer(blob[14:], "<f8").tolist() == [0, 1, 2, 3, 4, 5]


def test_f32_code():
    blob = encode_tensor(np.ones(3), dtype="f32")
    assert blob[4] == 2
    arr, end = decode_tensor(blob)
    assert end == len(blob) and arr.dtype == np.float64 and arr.tolist() == [1, 1, 1]


@given(arrays(np.float64, array_shapes(min_dims=0, max_dims=4, max_side=5),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_roundtrip_bit_exact(arr):
    out, end = decode_tensor(encode_tensor(arr))
    assert out.shape == arr.shape
    assert out.tobytes() == np.ascontiguousarray(arr).tobytes()


def test_errors_name_offset(tmp_path):
    blob = encode_tensor(np.ones((2, 2)))
    with pytest.raises(ContainerError, match="offset 0"):
        decode_tensor(b"XXXX" + blob[4:])
    with pytest.raises(ContainerError, match="offset 14"):
        decode_tensor(blob[:-3])
    bad = bytearray(blob)
    bad[4] = 9
    with pytest.raises(ContainerError, match="dtype code 9 at offset 4"):
        decode_tensor(bytes(bad))
    p = tmp_path / "t.mst"
    p.write_bytes(blob + b"\0")
    with pytest.raises(ContainerError, match="trailing"):
        load_tensor(p)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    state = {"enc.w": rng.normal(size=(3, 2, 3, 3)), "bn.running_var": rng.random(3), "é": np.zeros(0)}
    p = tmp_path / "c.ckpt"
    save_checkpoint(p, state)
    back = load_checkpoint(p)
    assert list(back) == list(state)
    for k in state:
        assert back[k].tobytes() == state[k].tobytes() and back[k].shape == state[k].shape


def test_checkpoint_truncation_reports_offset():
    buf = encode_checkpoint({"a": np.ones(4)})
    with pytest.raises(ContainerError, match="offset"):
        decode_checkpoint(buf[:-5])
    with pytest.raises(ContainerError, match="offset 0"):
        decode_checkpoint(b"NOPE" + buf[4:])


def test_save_load_tensor(tmp_path):
    arr = np.linspace(0, 1, 12).reshape(3, 4)
    save_tensor(tmp_path / "x.mst", arr)
    assert load_tensor(tmp_path / "x.mst").tobytes() == arr.tobytes()
