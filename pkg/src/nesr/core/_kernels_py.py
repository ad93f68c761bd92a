"""Pure-numpy patch extraction kernels (fallback when the compiled module is absent)."""
from itertools import product

import numpy as np


def _offsets(k, rank):
    return list(product(range(k), repeat=rank))


def im2col(x, k):
    """Unfold ``x`` (C, *S) into (C*k**rank, prod(S)) with zero padding (k-1)//2.

    Row ``c*k**rank + t`` holds channel ``c`` shifted by kernel tap ``t``
    (taps in C order over the kernel axes).
    """
    c = x.shape[0]
    spatial = x.shape[1:]
    rank = len(spatial)
    p = (k - 1) // 2
    xp = np.pad(x, [(0, 0)] + [(p, p)] * rank)
    taps = k ** rank
    cols = np.empty((c, taps) + spatial, dtype=x.dtype)
    for t, offs in enumerate(_offsets(k, rank)):
        sl = tuple(slice(o, o + s) for o, s in zip(offs, spatial))
        cols[:, t] = xp[(slice(None),) + sl]
    return cols.reshape(c * taps, -1)


def col2im(cols, channels, spatial, k):
    """Adjoint of :func:`im2col`: scatter-add columns back onto a (C, *S) array."""
    rank = len(spatial)
    p = (k - 1) // 2
    taps = k ** rank
    cols = cols.reshape((channels, taps) + tuple(spatial))
    padded = tuple(s + 2 * p for s in spatial)
    out = np.zeros((channels,) + padded, dtype=cols.dtype)
    for t, offs in enumerate(_offsets(k, rank)):
        sl = tuple(slice(o, o + s) for o, s in zip(offs, spatial))
        out[(slice(None),) + sl] += cols[:, t]
    inner = tuple(slice(p, p + s) for s in spatial)
    return np.ascontiguousarray(out[(slice(None),) + inner])
