# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Hot data-movement kernels behind conv2d/deconv2d: patch gather and scatter-add.

Accumulation order in col2im matches the pure-numpy fallback (kernel offsets
outermost), so both paths produce bitwise-identical results.
"""
import numpy as np

cimport cython

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] xp, Py_ssize_t k, Py_ssize_t stride):
    """Gather k*k sliding windows of a padded NCHW batch into column form.

    xp: (N, C, Hp, Wp) C-contiguous.  Returns (N, C*k*k, Ho*Wo) where
    Ho = (Hp - k)//stride + 1 and cols[n, (c*k+i)*k+j, y*Wo+x] =
    xp[n, c, y*stride+i, x*stride+j].
    """
    cdef Py_ssize_t n_im = xp.shape[0]
    cdef Py_ssize_t c_ch = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2]
    cdef Py_ssize_t wp = xp.shape[3]
    cdef Py_ssize_t ho = (hp - k) // stride + 1
    cdef Py_ssize_t wo = (wp - k) // stride + 1
    cdef Py_ssize_t n, c, i, j, y, x, row, ybase

    if floating is float:
        out_arr = np.empty((n_im, c_ch * k * k, ho * wo), dtype=np.float32)
    else:
        out_arr = np.empty((n_im, c_ch * k * k, ho * wo), dtype=np.float64)
    cdef floating[:, :, ::1] out = out_arr

    with nogil:
        for n in range(n_im):
            for c in range(c_ch):
                for i in range(k):
                    for j in range(k):
                        row = (c * k + i) * k + j
                        for y in range(ho):
                            ybase = y * stride + i
                            for x in range(wo):
                                out[n, row, y * wo + x] = xp[n, c, ybase, x * stride + j]
    return out_arr


def col2im(floating[:, :, ::1] cols, Py_ssize_t k, Py_ssize_t stride,
           Py_ssize_t hp, Py_ssize_t wp):
    """Scatter-add column form back onto a zeroed (N, C, hp, wp) buffer.

    Exact adjoint of im2col: every column entry is added at the window
    position it was gathered from.
    """
    cdef Py_ssize_t n_im = cols.shape[0]
    cdef Py_ssize_t ckk = cols.shape[1]
    cdef Py_ssize_t c_ch = ckk // (k * k)
    cdef Py_ssize_t ho = (hp - k) // stride + 1
    cdef Py_ssize_t wo = (wp - k) // stride + 1
    cdef Py_ssize_t n, c, i, j, y, x, row, ybase

    if floating is float:
        out_arr = np.zeros((n_im, c_ch, hp, wp), dtype=np.float32)
    else:
        out_arr = np.zeros((n_im, c_ch, hp, wp), dtype=np.float64)
    cdef floating[:, :, :, ::1] out = out_arr

    with nogil:
        for n in range(n_im):
            for c in range(c_ch):
                for i in range(k):
                    for j in range(k):
                        row = (c * k + i) * k + j
                        for y in range(ho):
                            ybase = y * stride + i
                            for x in range(wo):
                                out[n, c, ybase, x * stride + j] += cols[n, row, y * wo + x]
    return out_arr
