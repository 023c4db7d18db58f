"""Deliberately naive reference implementations used as test oracles.

Nothing here shares code with the package under test beyond plain data
access.
"""
import itertools
import math

import numpy as np


def trilinear_8corner(arr, p, extend="clamp"):
    """Explicit 8-term weighted sum at one point."""
    dims = arr.shape[:3]
    p = list(p)
    if extend == "clamp":
        p = [min(max(c, 0.0), n - 1.0) for c, n in zip(p, dims)]
        base = [min(int(math.floor(c)), n - 2) for c, n in zip(p, dims)]
    else:
        base = [int(math.floor(c)) for c in p]
    frac = [c - b for c, b in zip(p, base)]
    total = 0.0
    for corner in itertools.product((0, 1), repeat=3):
        idx = [b + o for b, o in zip(base, corner)]
        w = 1.0
        for o, f in zip(corner, frac):
            w *= f if o else 1.0 - f
        if all(0 <= i < n for i, n in zip(idx, dims)):
            total = total + w * arr[tuple(idx)]
    return total


def warp_loop(data, field):
    out = np.empty(data.shape)
    for idx in np.ndindex(*data.shape):
        p = [idx[i] + field[idx + (i,)] for i in range(3)]
        out[idx] = trilinear_8corner(data, p)
    return out


def masked_msd_loop(x, y, mask):
    total, count = 0.0, 0
    for idx in np.ndindex(*x.shape):
        if mask[idx]:
            d = float(x[idx]) - float(y[idx])
            total += d * d
            count += 1
    return total / count


def minmax_loop(x, mask):
    vals = [float(x[idx]) for idx in np.ndindex(*x.shape) if mask[idx]]
    lo, hi = min(vals), max(vals)
    return (x - lo) / (hi - lo)


def dilate_bruteforce(mask, r):
    out = np.zeros_like(mask, dtype=bool)
    on = list(zip(*np.nonzero(mask)))
    for idx in np.ndindex(*mask.shape):
        for q in on:
            if sum((a - b) ** 2 for a, b in zip(idx, q)) <= r * r:
                out[idx] = True
                break
    return out


def knn_fullsort(d, k, ids):
    order = sorted(range(len(d)), key=lambda i: (d[i], ids[i]))
    return order[:k]
