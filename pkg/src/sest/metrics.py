"""Saliency evaluation metrics: AUC-Judd, CC, SIM and NSS."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import (
    EmptyFixations,
    NoNegatives,
    NonFiniteInput,
    OutOfBounds,
    ShapeMismatch,
    ZeroVariance,
)
from .event_core import SensorGeometry

DIST_EPS = 1e-9


@dataclass(frozen=True)
class FixationSet:
    points: frozenset
    geometry: SensorGeometry

    def __init__(self, points: Iterable[tuple[int, int]], geometry: SensorGeometry) -> None:
        pts = frozenset((int(x), int(y)) for x, y in points)
        for i, (x, y) in enumerate(sorted(pts)):
            if not (0 <= x < geometry.width and 0 <= y < geometry.height):
                raise OutOfBounds(i, f"fixation ({x}, {y}) outside {geometry.width}x{geometry.height}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "geometry", geometry)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "FixationSet":
        ys, xs = np.nonzero(mask)
        h, w = mask.shape
        return cls(zip(xs.tolist(), ys.tolist()), SensorGeometry(w, h))

    def __len__(self) -> int:
        return len(self.points)

    def mask(self) -> np.ndarray:
        m = np.zeros((self.geometry.height, self.geometry.width), dtype=bool)
        for x, y in self.points:
            m[y, x] = True
        return m


@dataclass(frozen=True)
class MetricReport:
    """Four scores; ``None`` marks a metric whose preconditions failed."""

    auc_j: Optional[float]
    cc: Optional[float]
    sim: Optional[float]
    nss: Optional[float]

    FIELDS = ("auc_j", "cc", "sim", "nss")

    def as_dict(self) -> dict[str, Optional[float]]:
        return {k: getattr(self, k) for k in self.FIELDS}


def _as_map(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or 0 in m.shape:
        raise ShapeMismatch(f"saliency map must be a non-empty 2D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteInput("saliency map has non-finite values")
    return m


def _check_fix(m: np.ndarray, fix: FixationSet) -> np.ndarray:
    if (fix.geometry.height, fix.geometry.width) != m.shape:
        raise ShapeMismatch(
            f"fixations on {fix.geometry.width}x{fix.geometry.height}, map is {m.shape[1]}x{m.shape[0]}"
        )
    if len(fix) == 0:
        raise EmptyFixations("no fixation points")
    return fix.mask()


def normalize_to_distribution(m, eps: float = DIST_EPS) -> np.ndarray:
    m = _as_map(m)
    shifted = m - m.min() + eps
    return shifted / shifted.sum()


def cc(pred, gt) -> float:
    p, g = _as_map(pred), _as_map(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"{p.shape} vs {g.shape}")
    # test constancy directly: the mean of equal values can round away from them
    if p.max() == p.min() or g.max() == g.min():
        raise ZeroVariance("constant map has no correlation")
    pc, gc = p - p.mean(), g - g.mean()
    ssp, ssg = (pc * pc).sum(), (gc * gc).sum()
    # sqrt of the product, so cc(a, a) is exactly 1
    r = float((pc * gc).sum() / np.sqrt(ssp * ssg))
    return min(1.0, max(-1.0, r))


def sim(pred, gt, eps: float = DIST_EPS) -> float:
    p, g = _as_map(pred), _as_map(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"{p.shape} vs {g.shape}")
    return float(np.minimum(normalize_to_distribution(p, eps), normalize_to_distribution(g, eps)).sum())


def nss(pred, fix: FixationSet) -> float:
    s = _as_map(pred)
    mask = _check_fix(s, fix)
    if s.max() == s.min():
        return 0.0
    sd = s.std()
    return float(((s - s.mean()) / sd)[mask].mean())


def auc_judd(pred, fix: FixationSet) -> float:
    s = _as_map(pred)
    mask = _check_fix(s, fix)
    pos = s[mask]
    neg = s[~mask]
    if neg.size == 0:
        raise NoNegatives("every pixel is a fixation")
    thresholds = np.unique(pos)[::-1]
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    # counts of values >= theta via the left insertion point
    tp = pos.size - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg_sorted, thresholds, side="left")
    tpr = np.concatenate(([0.0], tp / pos.size, [1.0]))
    fpr = np.concatenate(([0.0], fp / neg.size, [1.0]))
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def evaluate_all(pred, gt, fix: FixationSet, eps: float = DIST_EPS) -> MetricReport:
    p, g = _as_map(pred), _as_map(gt)
    if p.shape != g.shape or (fix.geometry.height, fix.geometry.width) != p.shape:
        raise ShapeMismatch(
            f"pred {p.shape}, gt {g.shape}, fixations {fix.geometry.height}x{fix.geometry.width}"
        )

    def guarded(fn, *args):
        try:
            return fn(*args)
        except (ZeroVariance, EmptyFixations, NoNegatives):
            return None

    return MetricReport(
        auc_j=guarded(auc_judd, p, fix),
        cc=guarded(cc, p, g),
        sim=sim(p, g, eps),
        nss=guarded(nss, p, fix),
    )


def mean_reports(reports: Iterable[MetricReport]) -> tuple[MetricReport, dict[str, int]]:
    """Average each metric over the reports where it is available.

    Returns the averaged report and, per metric, how many reports contributed.
    """
    reports = list(reports)
    vals, counts = {}, {}
    for k in MetricReport.FIELDS:
        xs = [getattr(r, k) for r in reports if getattr(r, k) is not None]
        counts[k] = len(xs)
        vals[k] = float(np.mean(xs)) if xs else None
    return MetricReport(**vals), counts


__all__ = [
    "FixationSet",
    "MetricReport",
    "auc_judd",
    "cc",
    "evaluate_all",
    "mean_reports",
    "normalize_to_distribution",
    "nss",
    "sim",
]
