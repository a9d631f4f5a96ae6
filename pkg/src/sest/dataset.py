"""On-disk datasets described by a manifest file.

Each non-comment manifest line holds three whitespace-separated paths,
relative to the manifest's directory::

    events.evs  gt/map_{bin:03d}.pfm  fixations.csv

The middle field is a format pattern expanded once per bin.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np

from . import maps_io
from ._atomic import atomic_write
from .errors import DataError, EmptyDataset, ShapeMismatch
from .event_core import read_events, voxelize, write_events
from .metrics import FixationSet
from .synthetic import Sample


def read_manifest(path) -> list[tuple[str, str, str]]:
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            ev, pattern, fix = (os.path.join(base, p) for p in parts)
            out.append((ev, pattern, fix))
    if not out:
        raise EmptyDataset(f"{path}: manifest lists no samples")
    return out


def load_sample(events_path: str, gt_pattern: str, fix_path: str, bins: int, bin_us: int, origin: int = 0) -> Sample:
    stream = read_events(events_path)
    vox = voxelize(stream, bins, bin_us, origin)
    h, w = stream.geometry.height, stream.geometry.width
    maps = []
    for b in range(bins):
        try:
            m = maps_io.read_map(gt_pattern.format(bin=b))
        except (KeyError, IndexError, ValueError) as exc:
            raise DataError(f"bad ground-truth pattern {gt_pattern!r}: {exc}") from None
        if m.shape != (h, w):
            raise ShapeMismatch(f"{gt_pattern.format(bin=b)}: map {m.shape} vs sensor {(h, w)}")
        maps.append(np.clip(m, 0.0, 1.0))
    fix = maps_io.read_fixations(fix_path)
    fixes = tuple(FixationSet(maps_io.fixations_for_bin(fix, b), stream.geometry) for b in range(bins))
    name = os.path.splitext(os.path.basename(events_path))[0]
    return Sample(vox, np.stack(maps), fixes, stream, name)


def load_dataset(manifest, bins: int, bin_us: int, origin: int = 0) -> list[Sample]:
    return [load_sample(e, g, f, bins, bin_us, origin) for e, g, f in read_manifest(manifest)]


def write_dataset(samples: Sequence[Sample], out_dir) -> str:
    """Write samples as EVS1 + PFM + CSV files plus ``manifest.txt``; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        name = s.name or f"s{i:03d}"
        if s.events is None:
            raise DataError(f"sample {name} carries no event stream")
        write_events(s.events, os.path.join(out_dir, f"{name}.evs"))
        for b in range(s.bins):
            maps_io.write_pfm(os.path.join(out_dir, f"{name}_gt_{b:03d}.pfm"), s.saliency[b])
        fix = {b: sorted(s.fixations[b].points) for b in range(s.bins)}
        maps_io.write_fixations(os.path.join(out_dir, f"{name}_fix.csv"), fix)
        lines.append(f"{name}.evs {name}_gt_{{bin:03d}}.pfm {name}_fix.csv")
    path = os.path.join(out_dir, "manifest.txt")
    atomic_write(path, "# events  gt-pattern  fixations\n" + "\n".join(lines) + "\n")
    return path
