import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sest.errors import (
    BadMagic,
    BadPolarity,
    InvalidBinning,
    InvalidWindow,
    InvariantViolation,
    NonMonotonicTimestamp,
    OutOfBounds,
    TruncatedFile,
)
from sest.event_core import (
    EventStream,
    SensorGeometry,
    decode_events,
    encode_events,
    read_events,
    slice_window,
    validate_stream,
    voxelize,
    write_events,
)

import oracles

GEOM = SensorGeometry(8, 6)


@st.composite
def streams(draw, max_events=40, geom=GEOM):
    n = draw(st.integers(0, max_events))
    xs = draw(st.lists(st.integers(0, geom.width - 1), min_size=n, max_size=n))
    ys = draw(st.lists(st.integers(0, geom.height - 1), min_size=n, max_size=n))
    ps = draw(st.lists(st.sampled_from([1, -1]), min_size=n, max_size=n))
    ts = sorted(draw(st.lists(st.integers(-500, 5000), min_size=n, max_size=n)))
    return EventStream.from_events(geom, zip(xs, ys, ts, ps))


def test_validate_examples():
    validate_stream(EventStream(GEOM))
    validate_stream(EventStream.from_events(GEOM, [(0, 0, 10, 1), (1, 1, 10, -1), (2, 2, 20, 1)]))
    with pytest.raises(OutOfBounds) as e:
        validate_stream(EventStream.from_events(GEOM, [(0, 0, 10, 1), (GEOM.width, 0, 11, 1)]))
    assert e.value.index == 1


def test_validate_reports_first_bad_index():
    with pytest.raises(NonMonotonicTimestamp) as e:
        validate_stream(EventStream.from_events(GEOM, [(0, 0, 10, 1), (0, 0, 12, 1), (0, 0, 11, 1)]))
    assert e.value.index == 2
    with pytest.raises(BadPolarity) as e:
        validate_stream(EventStream.from_events(GEOM, [(0, 0, 10, 0)]))
    assert e.value.index == 0
    with pytest.raises(OutOfBounds):
        validate_stream(EventStream.from_events(GEOM, [(0, -1, 10, 1)]))


def test_stream_is_immutable():
    s = EventStream.from_events(GEOM, [(1, 2, 3, 1)])
    with pytest.raises(ValueError):
        s.x[0] = 5


def test_voxelize_examples():
    g = voxelize(EventStream(GEOM), 3, 100, 0)
    assert g.counts.shape == (3, 2, GEOM.height, GEOM.width) and not g.counts.any()
    s = EventStream.from_events(GEOM, [(3, 5, 50_000, 1)])
    g = voxelize(s, 2, 100_000, 0)
    assert g.counts[0, 0, 5, 3] == 1 and g.counts.sum() == 1


def test_voxelize_half_open_edges():
    s = EventStream.from_events(GEOM, [(0, 0, -1, 1), (0, 0, 99, 1), (0, 0, 100, 1), (0, 0, 200, -1)])
    g = voxelize(s, 2, 100, 0)
    assert g.counts[0, 0, 0, 0] == 1
    assert g.counts[1, 0, 0, 0] == 1
    assert g.counts.sum() == 2


@pytest.mark.parametrize("bins,dur", [(0, 10), (3, 0), (-1, 10)])
def test_voxelize_invalid_binning(bins, dur):
    with pytest.raises(InvalidBinning):
        voxelize(EventStream(GEOM), bins, dur, 0)


@settings(max_examples=150, deadline=None)
@given(streams(), st.integers(1, 5), st.integers(1, 2000), st.integers(-300, 300))
def test_voxelize_matches_oracle(s, bins, dur, origin):
    g = voxelize(s, bins, dur, origin)
    ref = oracles.voxelize(list(s), bins, dur, origin, GEOM.width, GEOM.height)
    np.testing.assert_array_equal(g.counts, ref)
    assert g.counts.min() >= 0


@settings(max_examples=100, deadline=None)
@given(streams(), st.integers(1, 5), st.integers(1, 2000), st.integers(-300, 300))
def test_voxelize_slice_commutes(s, bins, dur, origin):
    sliced = slice_window(s, origin, origin + bins * dur)
    assert voxelize(sliced, bins, dur, origin) == voxelize(s, bins, dur, origin)
    t = s.t
    inside = (t >= origin) & (t < origin + bins * dur)
    g = voxelize(s, bins, dur, origin).counts
    assert g.sum() == inside.sum()
    assert g[:, 0].sum() == (inside & (s.p == 1)).sum()
    assert g[:, 1].sum() == (inside & (s.p == -1)).sum()


def test_slice_examples():
    s = EventStream.from_events(GEOM, [(0, 0, 50, 1), (1, 0, 100, -1), (2, 0, 150, 1), (3, 0, 200, 1)])
    assert slice_window(s, 0, 1000) == s
    assert len(slice_window(s, 100, 100)) == 0
    assert [e.t for e in slice_window(s, 100, 200)] == [100, 150]
    with pytest.raises(InvalidWindow):
        slice_window(s, 5, 4)


@settings(max_examples=100, deadline=None)
@given(streams(), st.integers(-600, 5100), st.integers(0, 3000))
def test_slice_matches_linear_scan(s, a, width):
    got = list(slice_window(s, a, a + width))
    assert got == [e for e in s if a <= e.t < a + width]


def test_evs_roundtrip_and_layout(tmp_path):
    s = EventStream.from_events(GEOM, [(1, 2, 3, 1), (7, 5, 3, -1), (0, 0, 2**40, 1)])
    path = tmp_path / "a.evs"
    write_events(s, path)
    raw = path.read_bytes()
    assert raw[:4] == b"EVS1"
    assert struct.unpack_from("<IIQ", raw, 4) == (8, 6, 3)
    assert len(raw) == 20 + 16 * 3
    x, y, p = struct.unpack_from("<HHb", raw, 20 + 16)
    assert (x, y, p) == (7, 5, -1)
    assert raw[20 + 16 + 5:20 + 16 + 8] == b"\0\0\0"
    assert read_events(path) == s


def test_evs_errors():
    good = encode_events(EventStream.from_events(GEOM, [(1, 1, i, 1) for i in range(5)]))
    with pytest.raises(BadMagic):
        decode_events(b"XXXX" + good[4:])
    with pytest.raises(TruncatedFile):
        decode_events(good[:-16])
    with pytest.raises(TruncatedFile):
        decode_events(good[:10])
    bad = EventStream.from_events(GEOM, [(1, 1, 5, 1), (1, 1, 4, 1)])
    with pytest.raises(InvariantViolation):
        decode_events(encode_events(bad))


@settings(max_examples=200, deadline=None)
@given(streams(max_events=60))
def test_evs_roundtrip_property(s):
    buf = encode_events(s)
    assert decode_events(buf) == s
    assert encode_events(decode_events(buf)) == buf
