import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nsinger.containers import MAGIC, decode_mel, encode_mel, read_mel, write_mel
from nsinger.errors import CorruptFileError, ParseError, VersionMismatchError


def test_header_layout():
    data = encode_mel(np.arange(6, dtype=np.float32).reshape(2, 3))
    magic, version, n, length, reserved = struct.unpack("<6sHHIH", data[:16])
    assert (magic, version, n, length, reserved) == (MAGIC, 1, 2, 3, 0)
    assert len(data) == 16 + 4 * 6
    assert np.frombuffer(data[16:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(0, 9)),
              elements=st.floats(0, 1, width=32)))
@settings(max_examples=60, deadline=None)
def test_round_trip_bit_exact(mel):
    out = decode_mel(encode_mel(mel))
    assert out.shape == mel.shape and np.array_equal(out, mel)


def test_file_round_trip(tmp_path):
    mel = np.random.default_rng(0).random((40, 17)).astype(np.float32)
    write_mel(mel, tmp_path / "a.mel")
    assert np.array_equal(read_mel(tmp_path / "a.mel"), mel)


def test_errors():
    good = encode_mel(np.zeros((2, 3), np.float32))
    with pytest.raises(CorruptFileError):
        decode_mel(good[:10])
    with pytest.raises(CorruptFileError):
        decode_mel(good[:-4])
    with pytest.raises(ParseError):
        decode_mel(b"XXXXXX" + good[6:])
    with pytest.raises(VersionMismatchError):
        decode_mel(good[:6] + struct.pack("<H", 2) + good[8:])
    with pytest.raises(ValueError):
        encode_mel(np.zeros(3))
