"""Composite saliency loss: KL divergence, negated correlation and BCE.

All three terms act on one map at a time and are averaged over maps, so the
loss scale does not depend on resolution, bin count or batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RangeViolation, ShapeMismatch, UsageError
from .metrics import DIST_EPS
from .tensor_engine import ops
from .tensor_engine.tensor import Tensor

ALPHA_CC = 0.5
ALPHA_BCE = 0.7


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = ALPHA_CC
    alpha2: float = ALPHA_BCE
    eps: float = DIST_EPS

    def __post_init__(self) -> None:
        if self.alpha1 < 0 or self.alpha2 < 0 or not self.eps > 0:
            raise UsageError(f"invalid loss weights {self}")


def _pair(pred, gt) -> tuple[Tensor, Tensor]:
    p, g = ops.as_tensor(pred), ops.as_tensor(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"pred {p.shape} vs gt {g.shape}")
    return p, g


def to_distribution(m: Tensor, eps: float = DIST_EPS) -> Tensor:
    shifted = ops.add(ops.sub(m, ops.amin(m)), eps)
    return ops.div(shifted, ops.sum(shifted))


def loss_kl(pred, gt, eps: float = DIST_EPS) -> Tensor:
    """KL(gt || pred) between the min-shifted, normalized maps."""
    p, g = _pair(pred, gt)
    q = to_distribution(p, eps)
    y = to_distribution(g, eps)
    # y > 0 everywhere thanks to eps, so no 0*log(0) terms arise
    return ops.sum(ops.mul(y, ops.sub(ops.log(y), ops.log(q))))


def loss_cc(pred, gt) -> Tensor:
    """Negated Pearson correlation; 0 when either map is constant."""
    p, g = _pair(pred, gt)
    if np.ptp(p.data) == 0 or np.ptp(g.data) == 0:
        return Tensor(0.0)
    pc = ops.sub(p, ops.mean(p))
    gc = ops.sub(g, ops.mean(g))
    ssp = ops.sum(ops.square(pc))
    ssg = ops.sum(ops.square(gc))
    return ops.neg(ops.div(ops.sum(ops.mul(pc, gc)), ops.sqrt(ops.mul(ssp, ssg))))


LOG_FLOOR = -100.0


def loss_bce(pred, gt) -> Tensor:
    """Mean pixelwise binary cross-entropy against a continuous target.

    Each log is clamped at -100, so saturated predictions give a large but
    finite loss and 0 * log(0) contributes 0.
    """
    p, g = _pair(pred, gt)
    pd, gd = p.data, g.data
    if np.any(gd < 0) or np.any(gd > 1):
        raise RangeViolation("BCE target outside [0, 1]")
    if np.any(pd < 0) or np.any(pd > 1):
        raise RangeViolation("BCE prediction outside [0, 1]")
    t1 = ops.mul(g, ops.clamped_log(p, LOG_FLOOR))
    t2 = ops.mul(ops.sub(1.0, g), ops.clamped_log(ops.sub(1.0, p), LOG_FLOOR))
    return ops.neg(ops.mean(ops.add(t1, t2)))


def _maps(x) -> Tensor:
    t = ops.as_tensor(x)
    if t.ndim < 2:
        raise ShapeMismatch(f"expected maps [..., H, W], got {t.shape}")
    return t.reshape((-1,) + t.shape[-2:])


def map_loss(pred, gt, weights: LossWeights = LossWeights()) -> Tensor:
    p, g = _pair(pred, gt)
    total = loss_kl(p, g, weights.eps)
    if weights.alpha1:
        total = ops.add(total, ops.mul(loss_cc(p, g), weights.alpha1))
    if weights.alpha2:
        total = ops.add(total, ops.mul(loss_bce(p, g), weights.alpha2))
    return total


def combined_loss(pred, gt, weights: LossWeights = LossWeights()) -> Tensor:
    """Mean over every map of KL + alpha1 * CC + alpha2 * BCE.

    ``pred`` and ``gt`` share a shape ending in (H, W); all leading axes
    (batch, bins, the singleton channel) are treated as a list of maps.
    """
    p, g = _pair(pred, gt)
    pm, gm = _maps(p), _maps(g)
    n = pm.shape[0]
    total = None
    for i in range(n):
        li = map_loss(pm[i], gm[i], weights)
        total = li if total is None else ops.add(total, li)
    return ops.div(total, float(n))
