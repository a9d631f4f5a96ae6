"""SESTCKPT binary checkpoints.

Layout (little-endian): magic ``SESTCKPT``, u32 version, then records until
end of file. Each record is u32 name length, UTF-8 name, u32 rank, rank u64
dims and the float64 values in row-major order.
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

from .._atomic import atomic_write
from ..errors import BadMagic, DataError, TruncatedFile

MAGIC = b"SESTCKPT"
VERSION = 1
_U32 = struct.Struct("<I")


def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _U32.pack(VERSION)]
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_U32.pack(a.ndim))
        parts.append(np.asarray(a.shape, dtype="<u8").tobytes())
        parts.append(np.ascontiguousarray(a).tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    if buf[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {bytes(buf[:8])!r}")
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedFile(f"checkpoint ends inside a record at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    (version,) = _U32.unpack(take(4))
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    while pos < len(buf):
        (nlen,) = _U32.unpack(take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = _U32.unpack(take(4))
        dims = tuple(int(d) for d in np.frombuffer(take(8 * rank), dtype="<u8"))
        count = int(np.prod(dims)) if dims else 1
        vals = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims)
        if name in out:
            raise DataError(f"duplicate checkpoint record {name!r}")
        out[name] = vals.astype(np.float64)
    return out


def save_checkpoint(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    atomic_write(path, encode_checkpoint(tensors))


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
