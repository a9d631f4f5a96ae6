"""Hermetic toy data: a bright blob drifting over a dark background.

Frames are rendered, converted to events by the simulator and binned; the
ground-truth saliency per bin is a Gaussian centred on the blob at the bin
midpoint, and fixations are the pixels where that Gaussian is near its peak.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .esim import Frame, SimConfig, simulate
from .event_core import EventStream, VoxelGrid, voxelize
from .metrics import FixationSet

NUCF_BIN_US = 100_000


@dataclass(frozen=True)
class Sample:
    voxels: VoxelGrid
    saliency: np.ndarray  # [T, H, W] in [0, 1]
    fixations: tuple[FixationSet, ...]
    events: Optional[EventStream] = None
    name: str = ""

    @property
    def bins(self) -> int:
        return self.voxels.bins

    def model_input(self) -> np.ndarray:
        return self.voxels.to_model_input()


def _gaussian(h: int, w: int, cx: float, cy: float, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma ** 2))


def make_sample(
    rng: np.random.Generator,
    height: int = 64,
    width: int = 64,
    bins: int = 2,
    bin_us: int = NUCF_BIN_US,
    frames_per_bin: int = 4,
    blob_sigma: float = 4.0,
    saliency_sigma: float = 6.0,
    fixation_level: float = 0.9,
    sim: SimConfig = SimConfig(),
    name: str = "",
) -> Sample:
    margin = 0.25
    lo, hi = [margin * width, margin * height], [(1 - margin) * width, (1 - margin) * height]
    start, end = rng.uniform(lo, hi), rng.uniform(lo, hi)
    # pixels per bin; start and end both lie inside the frame
    velocity = (end - start) / bins
    duration = bins * bin_us

    def centre(t_us: float) -> np.ndarray:
        return start + velocity * (t_us / bin_us)

    n_frames = bins * frames_per_bin + 1
    frames = []
    for i in range(n_frames):
        t = int(round(i * duration / (n_frames - 1)))
        cx, cy = centre(t)
        img = 0.1 + 0.8 * _gaussian(height, width, cx, cy, blob_sigma)
        frames.append(Frame(t, img))
    events = simulate(frames, sim)
    voxels = voxelize(events, bins, bin_us, 0)

    maps, fixes = [], []
    for b in range(bins):
        cx, cy = centre((b + 0.5) * bin_us)
        m = _gaussian(height, width, cx, cy, saliency_sigma)
        m /= m.max()
        maps.append(m)
        fixes.append(FixationSet.from_mask(m >= fixation_level))
    return Sample(voxels, np.stack(maps), tuple(fixes), events, name)


def make_dataset(n: int, seed: int = 0, **kwargs) -> list[Sample]:
    rng = np.random.default_rng(seed)
    return [make_sample(rng, name=f"s{i:03d}", **kwargs) for i in range(n)]
