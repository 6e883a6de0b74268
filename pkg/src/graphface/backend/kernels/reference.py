"""Pure-numpy fallback for the compiled patch gather/scatter kernels.

Loops run over the k*k kernel offsets only; the per-offset work is a strided
slice copy or add, so this stays usable (if slower) without the extension.
The (i, j) accumulation order in col2im matches the compiled kernel so both
paths agree bitwise.
"""
import numpy as np


def im2col(xp, k, stride):
    n, c, hp, wp = xp.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = np.empty((n, c * k * k, ho * wo), dtype=xp.dtype)
    view = cols.reshape(n, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            view[:, :, i, j] = xp[:, :, i:i + (ho - 1) * stride + 1:stride,
                                  j:j + (wo - 1) * stride + 1:stride]
    return cols


def col2im(cols, k, stride, hp, wp):
    n, ckk, _ = cols.shape
    c = ckk // (k * k)
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    view = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + (ho - 1) * stride + 1:stride,
                j:j + (wo - 1) * stride + 1:stride] += view[:, :, i, j]
    return out
