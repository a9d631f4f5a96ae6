"""AdamW with decoupled weight decay."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import MissingGradient
from .tensor import Parameter

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8
WEIGHT_DECAY = 0.01


def adamw_step(
    params: Iterable[Parameter],
    lr: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPS,
    weight_decay: float = WEIGHT_DECAY,
) -> None:
    params = list(params)
    for p in params:
        if p.grad is None:
            raise MissingGradient(f"parameter {p.name!r} has no gradient")
    for p in params:
        g = p.grad
        p.step += 1
        # decay acts on the weights directly, not through the moments
        theta = p.data - lr * weight_decay * p.data
        p.m = beta1 * p.m + (1 - beta1) * g
        p.v = beta2 * p.v + (1 - beta2) * g * g
        m_hat = p.m / (1 - beta1 ** p.step)
        v_hat = p.v / (1 - beta2 ** p.step)
        p.data = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
