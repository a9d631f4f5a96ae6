"""PFM / PGM map files and fixation CSVs."""

from __future__ import annotations

import csv
import io
import os
from collections import defaultdict

import numpy as np

from ._atomic import atomic_write
from .errors import BadMagic, DataError, TruncatedFile


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise TruncatedFile("header ended early")
    return buf[start:pos], pos


def _header(buf: bytes, ntokens: int) -> tuple[list[bytes], int]:
    toks, pos = [], 0
    for _ in range(ntokens):
        tok, pos = _read_token(buf, pos)
        toks.append(tok)
    # exactly one whitespace byte separates the header from the raster
    return toks, pos + 1


def read_pfm(path) -> np.ndarray:
    """Load a single-channel PFM as a float64 array, top row first."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(b"Pf"):
        raise BadMagic(f"{path}: not a greyscale PFM")
    try:
        (_, w, h, scale), pos = _header(buf, 4)
        w, h, scale = int(w), int(h), float(scale)
    except ValueError as exc:
        raise DataError(f"{path}: malformed PFM header") from exc
    endian = "<" if scale < 0 else ">"
    need = w * h * 4
    if len(buf) - pos < need:
        raise TruncatedFile(f"{path}: expected {need} raster bytes")
    data = np.frombuffer(buf, dtype=endian + "f4", count=w * h, offset=pos)
    # PFM stores rows bottom to top
    return np.flipud(data.reshape(h, w)).astype(np.float64)


def write_pfm(path, array: np.ndarray) -> None:
    a = np.asarray(array, dtype=np.float64)
    if a.ndim != 2:
        raise DataError(f"PFM map must be 2D, got shape {a.shape}")
    h, w = a.shape
    body = np.ascontiguousarray(np.flipud(a), dtype="<f4").tobytes()
    atomic_write(path, f"Pf\n{w} {h}\n-1.0\n".encode("ascii") + body)


def read_pgm(path) -> np.ndarray:
    """Load an 8-bit binary PGM, scaled to [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(b"P5"):
        raise BadMagic(f"{path}: not a binary PGM")
    try:
        (_, w, h, maxval), pos = _header(buf, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise DataError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    if len(buf) - pos < w * h:
        raise TruncatedFile(f"{path}: expected {w * h} raster bytes")
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.float64) / 255.0


def write_pgm(path, array: np.ndarray) -> None:
    a = np.asarray(array, dtype=np.float64)
    if a.ndim != 2:
        raise DataError(f"PGM image must be 2D, got shape {a.shape}")
    h, w = a.shape
    q = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes())


def read_map(path) -> np.ndarray:
    """PFM or PGM, chosen by magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return read_pgm(path)
    return read_pfm(path)


STATIC_BIN = -1


def read_fixations(path) -> dict[int, list[tuple[int, int]]]:
    """Parse ``bin,x,y`` lines into {bin: [(x, y), ...]}; bin -1 means static."""
    out: dict[int, list[tuple[int, int]]] = defaultdict(list)
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip() == "bin":
                continue
            try:
                b, x, y = (int(v) for v in row)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: expected 'bin,x,y', got {row!r}") from exc
            out[b].append((x, y))
    return dict(out)


def fixations_for_bin(fix: dict[int, list[tuple[int, int]]], b: int) -> list[tuple[int, int]]:
    return list(fix.get(b, [])) + list(fix.get(STATIC_BIN, []))


def write_fixations(path, fix: dict[int, list[tuple[int, int]]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "x", "y"])
    for b in sorted(fix):
        for x, y in fix[b]:
            w.writerow([b, x, y])
    atomic_write(path, buf.getvalue())


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return os.fspath(path)
