import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mfif.field import SampledSurface
from mfif.fif import build
from mfif.gridio import MAGIC, GridFileError, read_grid, write_grid

from helpers import random_fif


def test_header_layout(tmp_path):
    s = SampledSurface.uniform(np.arange(6.0).reshape(2, 3), [(-1.0, 1.0), (0.0, 2.0)])
    path = tmp_path / "g.frgrid"
    write_grid(path, s)
    raw = path.read_bytes()
    assert raw[:7] == MAGIC
    assert struct.unpack_from("<I", raw, 7) == (2,)
    assert struct.unpack_from("<2Q", raw, 11) == (2, 3)
    assert struct.unpack_from("<4d", raw, 27) == (-1.0, 1.0, 0.0, 2.0)
    assert np.array_equal(np.frombuffer(raw[59:], "<f8"), np.arange(6.0))


def _shapes():
    return st.lists(st.integers(1, 6), min_size=1, max_size=3)


@settings(max_examples=50, deadline=None)
@given(_shapes().flatmap(lambda d: arrays(np.float64, d, elements=st.floats(allow_nan=False, allow_infinity=False, width=64))))
def test_round_trip_is_bit_exact(tmp_path_factory, values):
    s = SampledSurface.uniform(values)
    path = tmp_path_factory.mktemp("g") / "g.frgrid"
    write_grid(path, s)
    back = read_grid(path)
    assert back.values.tobytes() == np.ascontiguousarray(values).tobytes()
    assert back.domain == s.domain
    assert all(np.array_equal(a, np.linspace(0, 1, d)) for a, d in zip(back.axes, back.dims))


def test_round_trip_built_surface(tmp_path, rng):
    spec = random_fif(rng, 2)
    s, _ = build(spec, 3)
    write_grid(tmp_path / "s.frgrid", s)
    back = read_grid(tmp_path / "s.frgrid")
    assert np.array_equal(back.values, s.values) and back.domain == s.domain


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.frgrid"
    path.write_bytes(b"NOTGRID" + bytes(40))
    with pytest.raises(GridFileError, match="magic"):
        read_grid(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.frgrid"
    write_grid(path, SampledSurface.uniform(np.zeros((4, 4))))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(GridFileError, match="payload"):
        read_grid(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "h.frgrid"
    path.write_bytes(MAGIC + struct.pack("<I", 2) + bytes(4))
    with pytest.raises(GridFileError, match="header"):
        read_grid(path)
