"""Slow, obviously-correct reference implementations used by the tests.

Everything here is written with plain Python loops over scalars so it shares
no code path with the vectorized library.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------- metrics

def mean(xs):
    return sum(xs) / len(xs)


def auc_judd(pred, fix_mask):
    """Brute-force ROC: sweep every distinct value, keep points at fixation values."""
    h, w = pred.shape
    pos = [pred[y][x] for y in range(h) for x in range(w) if fix_mask[y][x]]
    neg = [pred[y][x] for y in range(h) for x in range(w) if not fix_mask[y][x]]
    fix_values = set(pos)
    pts = [(0.0, 0.0)]
    for theta in sorted({v for row in pred for v in row}, reverse=True):
        if theta not in fix_values:
            continue
        tpr = sum(1 for v in pos if v >= theta) / len(pos)
        fpr = sum(1 for v in neg if v >= theta) / len(neg)
        pts.append((fpr, tpr))
    pts.append((1.0, 1.0))
    area = 0.0
    for (f0, t0), (f1, t1) in zip(pts, pts[1:]):
        area += (f1 - f0) * (t0 + t1) / 2.0
    return area


def cc(a, b):
    xs = [float(v) for v in np.ravel(a)]
    ys = [float(v) for v in np.ravel(b)]
    mx, my = mean(xs), mean(ys)
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    vx = sum((x - mx) ** 2 for x in xs)
    vy = sum((y - my) ** 2 for y in ys)
    return cov / math.sqrt(vx * vy)


def distribution(a, eps=1e-9):
    xs = [float(v) for v in np.ravel(a)]
    lo = min(xs)
    shifted = [x - lo + eps for x in xs]
    total = sum(shifted)
    return [s / total for s in shifted]


def sim(a, b, eps=1e-9):
    return sum(min(p, q) for p, q in zip(distribution(a, eps), distribution(b, eps)))


def nss(pred, fix_mask):
    xs = [float(v) for v in np.ravel(pred)]
    m = mean(xs)
    sd = math.sqrt(mean([(x - m) ** 2 for x in xs]))
    if sd == 0:
        return 0.0
    hits = [(float(v) - m) / sd for v, f in zip(np.ravel(pred), np.ravel(fix_mask)) if f]
    return mean(hits)


# ---------------------------------------------------------------- events

def voxelize(events, bins, bin_duration, origin, width, height):
    grid = np.zeros((bins, 2, height, width), dtype=np.int64)
    for x, y, t, p in events:
        k = (t - origin) // bin_duration
        if t < origin or k >= bins:
            continue
        grid[k, 0 if p > 0 else 1, y, x] += 1
    return grid


def one_pixel_events(levels, times, c_pos, c_neg, refractory, tol=1e-9):
    """Scalar simulation of one pixel from per-frame log intensities.

    A level counts as reached when the signal gets within ``tol`` thresholds
    of it, the same allowance the library makes for rounding in the
    accumulated reference.
    """
    ref = levels[0]
    last = -math.inf
    out = []
    for (l0, t0), (l1, t1) in zip(zip(levels, times), zip(levels[1:], times[1:])):
        while True:
            if l1 >= ref + c_pos - tol * c_pos:
                target, pol = ref + c_pos, 1
            elif l1 <= ref - c_neg + tol * c_neg:
                target, pol = ref - c_neg, -1
            else:
                break
            frac = min(max((target - l0) / (l1 - l0), 0.0), 1.0)
            t = t0 + frac * (t1 - t0)
            if t - last >= refractory:
                out.append((int(t), pol))
                last = t
            ref = target
    return out


# ---------------------------------------------------------------- convolution

def conv2d(x, w, b, stride=1, pad=0):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    oh, ow = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for i in range(n):
        for o in range(cout):
            for r in range(oh):
                for c in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[i, ci, r * stride + u, c * stride + v] * w[o, ci, u, v]
                    out[i, o, r, c] = acc + (0.0 if b is None else b[o])
    return out


def conv3d(x, w, b, pad=0):
    n, cin, t, h, wd = x.shape
    cout, _, kt, kh, kw = w.shape
    xp = np.zeros((n, cin, t + 2 * pad, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + t, pad:pad + h, pad:pad + wd] = x
    ot, oh, ow = t + 2 * pad - kt + 1, h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    out = np.zeros((n, cout, ot, oh, ow))
    for i in range(n):
        for o in range(cout):
            for s in range(ot):
                for r in range(oh):
                    for c in range(ow):
                        patch = xp[i, :, s:s + kt, r:r + kh, c:c + kw]
                        out[i, o, s, r, c] = float((patch * w[o]).sum()) + (0.0 if b is None else b[o])
    return out
