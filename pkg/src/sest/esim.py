"""Frame-to-event conversion by log-contrast threshold crossings.

Each pixel keeps a reference log intensity. Between two frames the log
intensity is interpolated linearly in time, and every time it moves one
contrast threshold away from the reference an event is emitted at the
interpolated crossing time, unless the pixel is still inside its refractory
period. The reference level advances on every crossing, emitted or not.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    GeometryMismatch,
    InvariantViolation,
    NonFiniteInput,
    NonIncreasingTimestamps,
    TooFewFrames,
    UsageError,
)
from .event_core import EventStream, SensorGeometry

DEFAULT_CONTRAST = 0.09
DEFAULT_REFRACTORY_US = 3000
DEFAULT_LOG_EPS = 1e-3

# crossings within this fraction of a threshold of the target level still count;
# absorbs rounding in ln() so that a ramp of exactly k thresholds yields k events
_LEVEL_TOL = 1e-9
# crossing times this close to a whole microsecond snap to it before truncation
_TIME_TOL = 1e-6


@dataclass(frozen=True)
class Frame:
    timestamp: int
    intensity: np.ndarray


@dataclass(frozen=True)
class SimConfig:
    c_pos: float = DEFAULT_CONTRAST
    c_neg: float = DEFAULT_CONTRAST
    refractory: int = DEFAULT_REFRACTORY_US
    log_eps: float = DEFAULT_LOG_EPS

    def __post_init__(self) -> None:
        if not (self.c_pos > 0 and self.c_neg > 0):
            raise UsageError("contrast thresholds must be positive")
        if self.refractory < 0:
            raise UsageError("refractory period must be >= 0")
        if not self.log_eps > 0:
            raise UsageError("log_eps must be positive")


def log_intensity(frame: Frame, log_eps: float = DEFAULT_LOG_EPS) -> np.ndarray:
    img = np.asarray(frame.intensity, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise NonFiniteInput(f"frame at t={frame.timestamp} has non-finite intensity")
    return np.log(img + log_eps)


def _to_us(t: np.ndarray) -> np.ndarray:
    r = np.rint(t)
    snapped = np.where(np.abs(t - r) < _TIME_TOL, r, np.trunc(t))
    return snapped.astype(np.int64)


def _check_frames(frames: Sequence[Frame]) -> None:
    if len(frames) < 2:
        raise TooFewFrames(f"need at least 2 frames, got {len(frames)}")
    shape = np.shape(frames[0].intensity)
    if len(shape) != 2:
        raise GeometryMismatch(f"frame 0 is not a 2D image: shape {shape}")
    for i, f in enumerate(frames):
        if np.shape(f.intensity) != shape:
            raise GeometryMismatch(f"frame {i} shape {np.shape(f.intensity)} != {shape}")
        if i and f.timestamp <= frames[i - 1].timestamp:
            raise NonIncreasingTimestamps(
                f"frame {i} at t={f.timestamp} not after t={frames[i - 1].timestamp}"
            )


def simulate(frames: Sequence[Frame], cfg: SimConfig = SimConfig()) -> EventStream:
    _check_frames(frames)
    h, w = np.shape(frames[0].intensity)
    logs = []
    for f in frames:
        L = log_intensity(f, cfg.log_eps).reshape(-1)
        img = np.asarray(f.intensity)
        if img.min() < 0 or img.max() > 1:
            raise InvariantViolation(f"frame at t={f.timestamp} has intensity outside [0, 1]")
        logs.append(L)

    npix = h * w
    ref = logs[0].copy()
    last = np.full(npix, -np.inf)
    out_t, out_pix, out_p = [], [], []

    for (fa, La), (fb, Lb) in zip(zip(frames, logs), zip(frames[1:], logs[1:])):
        ta, tb = float(fa.timestamp), float(fb.timestamp)
        slope = Lb - La
        for sign, c in ((1, cfg.c_pos), (-1, cfg.c_neg)):
            n = np.floor(sign * (Lb - ref) / c + _LEVEL_TOL).astype(np.int64)
            n[n < 0] = 0
            pix = np.nonzero(n)[0]
            if pix.size == 0:
                continue
            npx = n[pix]
            for k in range(1, int(npx.max()) + 1):
                sel = pix[npx >= k]
                level = ref[sel] + sign * k * c
                frac = np.clip((level - La[sel]) / slope[sel], 0.0, 1.0)
                t = _to_us(ta + frac * (tb - ta))
                emit = (t - last[sel]) >= cfg.refractory
                sel, t = sel[emit], t[emit]
                last[sel] = t
                out_t.append(t)
                out_pix.append(sel)
                out_p.append(np.full(sel.size, sign, dtype=np.int8))
            ref[pix] += sign * npx * c

    geometry = SensorGeometry(w, h)
    if not out_t:
        return EventStream(geometry)
    t = np.concatenate(out_t)
    pix = np.concatenate(out_pix)
    p = np.concatenate(out_p)
    # time, then row-major pixel; emission order breaks the remaining ties
    order = np.lexsort((np.arange(t.size), pix, t))
    t, pix, p = t[order], pix[order], p[order]
    return EventStream(geometry, pix % w, pix // w, t, p)
