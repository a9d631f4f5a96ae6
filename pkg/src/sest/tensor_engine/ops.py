"""Differentiable operations on :class:`Tensor`.

Each op computes its forward value with numpy and, when recording, registers
a vector-Jacobian product with the active tape.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from functools import lru_cache
from typing import Sequence

import numpy as np
from numba import njit

from ..errors import BadAxis, BadSigma, BadSize, KernelTooLarge, ShapeMismatch, UsageError
from .tensor import Tensor, make_result


# Piecewise ops append a fingerprint of the branch each element took while a
# recorder is active; gradient checks use it to spot probes that cross a kink.
_branch_log: list | None = None


@contextmanager
def record_branches():
    global _branch_log
    saved, _branch_log = _branch_log, []
    try:
        yield _branch_log
    finally:
        _branch_log = saved


def _note(mask) -> None:
    if _branch_log is not None:
        _branch_log.append(np.packbits(np.asarray(mask, dtype=bool)).tobytes())


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, check=False)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return make_result(
        ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return make_result(
        out, (a, b), lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape))
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,))


def clamped_log(a, floor: float) -> Tensor:
    """max(log(a), floor); no gradient where the floor is active."""
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore"):
        raw = np.log(ad)
    live = raw > floor
    _note(live)
    out = np.where(live, raw, floor)
    return make_result(out, (a,), lambda g: (np.where(live, g / np.where(live, ad, 1.0), 0.0),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def _leaky_relu_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, 1.0, slope)


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    if not 0 < slope < 1:
        raise UsageError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = as_tensor(x)
    xd = x.data
    pos = xd > 0
    _note(pos)
    out = np.where(pos, xd, slope * xd)
    return make_result(out, (x,), lambda g: (g * _leaky_relu_grad(xd, slope),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument never overflows; underflow to 0 is the answer
    with np.errstate(under="ignore"):
        z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def _sigmoid_grad(y: np.ndarray) -> np.ndarray:
    return y * (1.0 - y)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return make_result(out, (x,), lambda g: (g * _sigmoid_grad(out),))


def activation(x, kind: str, slope: float = 0.01) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    raise UsageError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise BadAxis(f"axis {a} out of range for rank {ndim}")
        out.append(a % ndim)
    return tuple(out)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out), (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    n = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axes, keepdims), 1.0 / n)


def amin(x) -> Tensor:
    """Global minimum; the gradient flows to the first minimal element."""
    x = as_tensor(x)
    flat = x.data.reshape(-1)
    i = int(np.argmin(flat))
    if _branch_log is not None:
        _branch_log.append(i.to_bytes(8, "little"))
    shape = x.shape

    def vjp(g):
        gx = np.zeros(flat.size)
        gx[i] = g.reshape(-1)[0]
        return (gx.reshape(shape),)

    return make_result(np.asarray(flat[i]), (x,), vjp)


# ---------------------------------------------------------------- shape ops

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    return make_result(out, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)

    def vjp(g):
        gx = np.zeros(shape)
        if basic:
            # basic indexing never repeats an element
            gx[idx] += g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return make_result(np.array(x.data[idx]), (x,), vjp)


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ax = _norm_axis(axis, xs[0].ndim)[0]
    try:
        out = np.concatenate([x.data for x in xs], axis=ax)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def vjp(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(xs))]

    return make_result(out, tuple(xs), vjp)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    ad, bd = a.data, b.data

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_result(out, (a, b), vjp)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    ax = _norm_axis(axis, x.ndim)[0]
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=ax, keepdims=True)
    return make_result(
        out, (x,), lambda g: (out * (g - (g * out).sum(axis=ax, keepdims=True)),)
    )


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"gamma/beta must have shape ({c},), got {gamma.shape}, {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        red = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        dxhat = g * gamma.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, gg, gb

    return make_result(out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------- convolution

def _tuple(v, n: int, what: str) -> tuple[int, ...]:
    if isinstance(v, int):
        return (v,) * n
    v = tuple(int(i) for i in v)
    if len(v) != n:
        raise UsageError(f"{what} needs {n} entries, got {v}")
    return v


@njit(cache=True)
def _accumulate(wc, cols, out):  # pragma: no cover - compiled
    for j in range(cols.shape[0]):
        for c in range(wc.shape[0]):
            wv = wc[c, j]
            for m in range(cols.shape[1]):
                out[c, m] += wv * cols[j, m]


def _correlate(x: np.ndarray, w: np.ndarray, stride, pad):
    """Zero-padded N-d cross-correlation.

    Summation order is fixed: input channel outermost, then kernel offsets in
    row-major order, then the bias. A kernel with a singleton leading spatial
    axis therefore performs exactly the same float operations as the
    lower-rank correlation applied per leading index.
    """
    nd = w.ndim - 2
    n, cin = x.shape[:2]
    cout, kcin = w.shape[:2]
    if kcin != cin:
        raise ShapeMismatch(f"input has {cin} channels, kernel expects {kcin}")
    ksize = w.shape[2:]
    padded = tuple(s + 2 * p for s, p in zip(x.shape[2:], pad))
    if any(k > s for k, s in zip(ksize, padded)):
        raise KernelTooLarge(f"kernel {ksize} exceeds padded input {padded}")
    xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in pad]) if any(pad) else x
    osz = tuple((s - k) // st + 1 for s, k, st in zip(padded, ksize, stride))
    offsets = list(np.ndindex(*ksize))
    cols = np.empty((cin, len(offsets), n) + osz)
    for k, off in enumerate(offsets):
        cols[:, k] = xp[_window(off, stride, osz)].swapaxes(0, 1)
    cols = cols.reshape(cin * len(offsets), -1)
    out = np.zeros((cout, cols.shape[1]))
    _accumulate(np.ascontiguousarray(w.reshape(cout, -1)), cols, out)
    out = np.ascontiguousarray(out.reshape((cout, n) + osz).swapaxes(0, 1))
    return out, xp, osz, offsets


def _window(off, stride, osz) -> tuple:
    return (slice(None), slice(None)) + tuple(
        slice(o, o + st * (m - 1) + 1, st) for o, st, m in zip(off, stride, osz)
    )


def _conv(x, w, b, stride, pad, nd: int) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != nd + 2 or w.ndim != nd + 2:
        raise ShapeMismatch(f"conv{nd}d expects rank-{nd + 2} input and kernel, got {x.shape}, {w.shape}")
    stride = _tuple(stride, nd, "stride")
    pad = _tuple(pad, nd, "pad")
    out, xp, osz, offsets = _correlate(x.data, w.data, stride, pad)
    cout = w.shape[0]
    inputs = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ShapeMismatch(f"bias must have shape ({cout},), got {b.shape}")
        out += b.data.reshape((1, cout) + (1,) * nd)
        inputs.append(b)
    wd = w.data
    red = (0,) + tuple(range(2, nd + 2))

    def vjp(g):
        gw = np.empty_like(wd)
        gxp = np.zeros_like(xp)
        for off in offsets:
            sl = _window(off, stride, osz)
            patch = xp[sl]
            gw[(slice(None), slice(None)) + off] = np.tensordot(g, patch, axes=(red, red))
            gxp[sl] += np.moveaxis(np.tensordot(wd[(slice(None), slice(None)) + off], g, axes=([0], [1])), 0, 1)
        crop = (slice(None), slice(None)) + tuple(slice(p, p + s) for p, s in zip(pad, x.shape[2:]))
        grads = [gxp[crop], gw]
        if b is not None:
            grads.append(g.sum(axis=red))
        return grads

    return make_result(out, tuple(inputs), vjp)


def conv2d(x, w, b=None, stride=1, pad=0) -> Tensor:
    return _conv(x, w, b, stride, pad, 2)


def conv3d(x, w, b=None, stride=1, pad=0) -> Tensor:
    return _conv(x, w, b, stride, pad, 3)


# ---------------------------------------------------------------- normalization

def batch_norm3d(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Per-channel normalization over (N, T, H, W).

    Returns the output plus the running statistics to keep. In training mode
    those are exponential moving averages of the batch mean and population
    variance; in eval mode they are returned unchanged.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 5:
        raise ShapeMismatch(f"batch_norm3d expects [N,C,T,H,W], got {x.shape}")
    c = x.shape[1]
    for name, v in (("gamma", gamma.data), ("beta", beta.data), ("running_mean", running_mean), ("running_var", running_var)):
        if np.shape(v) != (c,):
            raise ShapeMismatch(f"{name} must have shape ({c},), got {np.shape(v)}")
    red = (0, 2, 3, 4)
    bshape = (1, c, 1, 1, 1)
    xd = x.data
    if training:
        mu = xd.mean(axis=red)
        xc = xd - mu.reshape(bshape)
        var = (xc * xc).mean(axis=red)
        new_mean = (1 - momentum) * running_mean + momentum * mu
        new_var = (1 - momentum) * running_var + momentum * var
    else:
        mu, var = running_mean, running_var
        xc = xd - mu.reshape(bshape)
        new_mean, new_var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).reshape(bshape)
    xhat = xc * inv
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def vjp(g):
        gg = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            dx = inv * (
                dxhat
                - dxhat.mean(axis=red, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=red, keepdims=True)
            )
        else:
            dx = dxhat * inv
        return dx, gg, gb

    return make_result(out, (x, gamma, beta), vjp), new_mean, new_var


# ---------------------------------------------------------------- spatial resampling

@lru_cache(maxsize=64)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation weights, half-pixel centers, edge-clamped."""
    a = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        f = src - lo
        a[i, lo] += 1.0 - f
        a[i, hi] += f
    a.flags.writeable = False
    return a


def _separable(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """out[..., i, j] = sum_{k,l} rows[i, k] x[..., k, l] cols[j, l]."""
    out = np.matmul(np.matmul(rows, x.data), cols.T)
    return make_result(out, (x,), lambda g: (np.matmul(np.matmul(rows.T, g), cols),))


def upsample_trilinear(x, out_h: int, out_w: int) -> Tensor:
    """Resize the two trailing axes of [N, C, T, H, W]; T is left untouched."""
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise BadSize(f"output size must be >= 1, got {out_h}x{out_w}")
    if x.ndim != 5:
        raise ShapeMismatch(f"expected [N,C,T,H,W], got {x.shape}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return _separable(x, np.eye(h), np.eye(w))
    return _separable(x, _interp_matrix(h, out_h), _interp_matrix(w, out_w))


def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    if not sigma > 0:
        raise BadSigma(f"sigma must be positive, got {sigma}")
    if radius < 1:
        raise BadSigma(f"radius must be >= 1, got {radius}")
    k = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    return k / k.sum()


def _reflect_index(n: int, radius: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1 + 2 * radius, dtype=np.intp)
    idx = np.arange(-radius, n + radius)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


@lru_cache(maxsize=64)
def _blur_matrix(n: int, sigma: float, radius: int) -> np.ndarray:
    """Dense matrix of a 1D reflect-padded Gaussian filter on n samples."""
    k = gaussian_kernel1d(sigma, radius)
    idx = _reflect_index(n, radius)
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(2 * radius + 1):
            m[i, idx[i + j]] += k[j]
    m.flags.writeable = False
    return m


def _blur_axis(a: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    # x + sum_j k_j (x_shifted_j - x): every difference vanishes on a
    # constant signal, so constants pass through bit for bit.
    n, radius = a.shape[axis], (k.size - 1) // 2
    padded = np.take(a, _reflect_index(n, radius), axis=axis)
    acc = np.zeros_like(a)
    for j in range(k.size):
        acc += k[j] * (np.take(padded, np.arange(j, j + n), axis=axis) - a)
    return a + acc


def gaussian_blur2d(x, sigma: float = 2.0, radius: int = 4) -> Tensor:
    """Separable reflect-padded Gaussian blur over the two trailing axes."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeMismatch("gaussian_blur2d needs at least 2 dimensions")
    k = gaussian_kernel1d(sigma, radius)
    h, w = x.shape[-2:]
    out = _blur_axis(_blur_axis(x.data, k, x.ndim - 2), k, x.ndim - 1)
    rows, cols = _blur_matrix(h, float(sigma), int(radius)), _blur_matrix(w, float(sigma), int(radius))
    # the filter is linear, so its adjoint is the transposed dense matrix
    return make_result(out, (x,), lambda g: (np.matmul(np.matmul(rows.T, g), cols),))
