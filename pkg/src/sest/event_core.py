"""Event streams, voxel grids and the EVS1 binary file format."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .errors import (
    BadMagic,
    BadPolarity,
    InvalidBinning,
    InvalidWindow,
    InvariantViolation,
    NonMonotonicTimestamp,
    OutOfBounds,
    TruncatedFile,
)
from ._atomic import atomic_write

EVS1_MAGIC = b"EVS1"
_HEADER = struct.Struct("<4sIIQ")
_RECORD = np.dtype(
    [("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "V3"), ("t", "<i8")]
)
assert _RECORD.itemsize == 16


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class SensorGeometry:
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InvariantViolation(f"bad sensor geometry {self.width}x{self.height}")


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class EventStream:
    """Columnar, immutable sequence of events on a fixed sensor.

    Construction does not validate; call :func:`validate_stream`.
    """

    geometry: SensorGeometry
    x: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    p: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))

    def __post_init__(self) -> None:
        cols = {k: _frozen(getattr(self, k), np.int64) for k in ("x", "y", "t")}
        cols["p"] = _frozen(self.p, np.int8)
        n = {len(v) for v in cols.values()}
        if len(n) > 1:
            raise InvariantViolation("event columns have different lengths")
        for k, v in cols.items():
            object.__setattr__(self, k, v)

    @classmethod
    def from_events(cls, geometry: SensorGeometry, events) -> "EventStream":
        events = list(events)
        if not events:
            return cls(geometry)
        x, y, t, p = zip(*events)
        return cls(geometry, np.array(x), np.array(y), np.array(t), np.array(p))

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return self.geometry == other.geometry and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in "xytp"
        )

    def take(self, mask: np.ndarray) -> "EventStream":
        return EventStream(self.geometry, self.x[mask], self.y[mask], self.t[mask], self.p[mask])


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Event counts indexed [bin, polarity-channel, y, x].

    Channel 0 holds positive events, channel 1 negative ones.
    """

    bins: int
    bin_duration: int
    origin: int
    counts: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.counts.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (
            (self.bins, self.bin_duration, self.origin)
            == (other.bins, other.bin_duration, other.origin)
            and np.array_equal(self.counts, other.counts)
        )

    def to_model_input(self) -> np.ndarray:
        """Real-valued [T, 2, H, W] array, counts mapped through ln(1 + c)."""
        return np.log1p(self.counts.astype(np.float64))


def validate_stream(stream: EventStream) -> None:
    """Raise on the first event that breaks a stream invariant."""
    n = len(stream)
    if n == 0:
        return
    g = stream.geometry
    oob = (stream.x < 0) | (stream.x >= g.width) | (stream.y < 0) | (stream.y >= g.height)
    badp = (stream.p != 1) & (stream.p != -1)
    back = np.zeros(n, dtype=bool)
    back[1:] = stream.t[1:] < stream.t[:-1]
    bad = oob | badp | back
    if not bad.any():
        return
    i = int(np.argmax(bad))
    if oob[i]:
        raise OutOfBounds(i, f"({stream.x[i]}, {stream.y[i]}) outside {g.width}x{g.height}")
    if badp[i]:
        raise BadPolarity(i, f"polarity {stream.p[i]}")
    raise NonMonotonicTimestamp(i, f"t={stream.t[i]} after t={stream.t[i - 1]}")


def voxelize(stream: EventStream, bins: int, bin_duration: int, origin: int = 0) -> VoxelGrid:
    if bins < 1 or bin_duration < 1:
        raise InvalidBinning(f"bins={bins}, bin_duration={bin_duration}")
    validate_stream(stream)
    g = stream.geometry
    counts = np.zeros((bins, 2, g.height, g.width), dtype=np.int64)
    if len(stream):
        # floor division keeps the half-open [k*d, (k+1)*d) edges exact for ints
        k = (stream.t - origin) // bin_duration
        keep = (stream.t >= origin) & (k < bins)
        ch = (stream.p[keep] < 0).astype(np.int64)
        np.add.at(counts, (k[keep], ch, stream.y[keep], stream.x[keep]), 1)
    return VoxelGrid(bins, bin_duration, origin, counts)


def slice_window(stream: EventStream, t_start: int, t_end: int) -> EventStream:
    if t_start > t_end:
        raise InvalidWindow(f"t_start={t_start} > t_end={t_end}")
    return stream.take((stream.t >= t_start) & (stream.t < t_end))


def encode_events(stream: EventStream) -> bytes:
    g = stream.geometry
    rec = np.zeros(len(stream), dtype=_RECORD)
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    rec["t"] = stream.t
    return _HEADER.pack(EVS1_MAGIC, g.width, g.height, len(stream)) + rec.tobytes()


def decode_events(buf: bytes) -> EventStream:
    if len(buf) < 4 or buf[:4] != EVS1_MAGIC:
        raise BadMagic(f"expected {EVS1_MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedFile("header shorter than 24 bytes")
    _, width, height, count = _HEADER.unpack_from(buf)
    need = _HEADER.size + count * _RECORD.itemsize
    if len(buf) < need:
        have = (len(buf) - _HEADER.size) // _RECORD.itemsize
        raise TruncatedFile(f"header declares {count} events, file holds {have}")
    try:
        geometry = SensorGeometry(width, height)
    except InvariantViolation as exc:
        raise InvariantViolation(str(exc)) from None
    rec = np.frombuffer(buf, dtype=_RECORD, count=count, offset=_HEADER.size)
    stream = EventStream(geometry, rec["x"], rec["y"], rec["t"], rec["p"])
    try:
        validate_stream(stream)
    except (OutOfBounds, BadPolarity, NonMonotonicTimestamp) as exc:
        raise InvariantViolation(f"decoded stream invalid: {exc}") from exc
    return stream


def read_events(path: str | os.PathLike) -> EventStream:
    with open(path, "rb") as fh:
        return decode_events(fh.read())


def write_events(stream: EventStream, path: str | os.PathLike) -> None:
    validate_stream(stream)
    if len(stream) and (stream.x.max() > 0xFFFF or stream.y.max() > 0xFFFF):
        raise InvariantViolation("coordinates exceed u16 range")
    atomic_write(path, encode_events(stream))
