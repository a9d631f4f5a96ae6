"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from ..errors import NonFiniteValue
from .ops import record_branches
from .tensor import Parameter, Tape, Tensor, backward

DEFAULT_H = 1e-5
_FLOOR = 1e-8
SHRINK = 10.0
MAX_SHRINKS = 3


def relative_error(a, b, floor: float = _FLOOR) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _scalar(t: Tensor) -> float:
    v = float(np.asarray(t.data).reshape(-1)[0])
    if not np.isfinite(v):
        raise NonFiniteValue(f"function value {v}")
    return v


def _probe(f: Callable[[], Tensor]) -> tuple[float, list]:
    with record_branches() as log:
        v = _scalar(f())
    return v, log


def central_difference(f: Callable[[], Tensor], put: Callable[[float], None], h: float) -> float:
    """(f(+h) - f(-h)) / 2h for a scalar ``f`` of one coordinate set by ``put``.

    Piecewise ops (leaky ReLU, argmin, clamped log) fingerprint the branch
    every element takes. If either probe lands on a different branch than
    the base point, the difference straddles a kink, so the step is divided
    by ``SHRINK`` and retried, at most ``MAX_SHRINKS`` times.
    """
    put(0.0)
    _, base = _probe(f)
    for attempt in range(MAX_SHRINKS + 1):
        put(h)
        fp, bp = _probe(f)
        put(-h)
        fm, bm = _probe(f)
        put(0.0)
        if (bp == base and bm == base) or attempt == MAX_SHRINKS:
            return (fp - fm) / (2 * h)
        h /= SHRINK
    raise AssertionError("unreachable")


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    h: float = DEFAULT_H,
    coords: Optional[Iterable[int]] = None,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``coords`` restricts the comparison to the given flat indices of ``x``.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        y = f(xt)
    _scalar(y)
    backward(tape, y)
    analytic = np.zeros_like(x0) if xt.grad is None else xt.grad
    if not np.all(np.isfinite(analytic)):
        raise NonFiniteValue("reverse-mode gradient is not finite")

    idx = range(x0.size) if coords is None else coords
    flat = x0.reshape(-1)
    worst = 0.0
    for i in idx:
        probe = flat.copy()

        def put(d: float, i=i, probe=probe) -> None:
            probe[i] = flat[i] + d

        num = central_difference(lambda: f(Tensor(probe.reshape(x0.shape))), put, h)
        worst = max(worst, float(relative_error(analytic.reshape(-1)[i], num)))
    return worst


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    params: list[Parameter],
    h: float = DEFAULT_H,
    per_param: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    floor: float = _FLOOR,
) -> tuple[float, dict[str, float]]:
    """Check d(loss)/d(param) for parameters perturbed in place.

    ``loss_fn`` must rebuild the loss from the current parameter values and
    must not mutate any other state. With ``per_param`` set, that many
    coordinates are drawn at random from each parameter; otherwise every
    coordinate is checked. Returns the overall maximum relative error and the
    per-parameter maxima keyed by name. ``floor`` is the smallest
    denominator used in the relative error; raising it stops gradients that
    are zero by symmetry from being judged against pure rounding noise.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    with Tape() as tape:
        loss = loss_fn()
    _scalar(loss)
    backward(tape, loss, params)
    analytic = {id(p): p.grad.copy() for p in params}

    report: dict[str, float] = {}
    for p in params:
        n = p.data.size
        idx = np.arange(n) if per_param is None or per_param >= n else rng.choice(n, per_param, replace=False)
        worst = 0.0
        for i in idx:
            flat = p.data.reshape(-1)
            orig = flat[i]

            def put(d: float, flat=flat, i=i, orig=orig) -> None:
                flat[i] = orig + d

            num = central_difference(loss_fn, put, h)
            worst = max(worst, float(relative_error(analytic[id(p)].reshape(-1)[i], num, floor)))
        report[p.name or f"param{len(report)}"] = worst
    return (max(report.values()) if report else 0.0), report
