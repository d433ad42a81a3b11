# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels.

Same contracts as ``fallback``: pre-padded NHWC input, weights
``(kh, kw, c_in // groups, c_out)`` blocked by group, single-threaded loops
so results are bitwise deterministic for a fixed dtype.
"""

import numpy as np

cimport cython

ctypedef fused floating:
    float
    double


def conv2d_forward(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] w,
                   int stride, int oh, int ow, int groups):
    cdef Py_ssize_t n = xp.shape[0]
    cdef Py_ssize_t cin = xp.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1]
    cdef Py_ssize_t cpg = w.shape[2], cout = w.shape[3]
    cdef Py_ssize_t cog = cout // groups

    if floating is float:
        y_arr = np.zeros((n, oh, ow, cout), dtype=np.float32)
    else:
        y_arr = np.zeros((n, oh, ow, cout), dtype=np.float64)
    cdef floating[:, :, :, ::1] y = y_arr

    cdef Py_ssize_t b, i, j, ki, kj, g, ci, co, ih, iw
    cdef floating xv
    with nogil:
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    for ki in range(kh):
                        ih = i * stride + ki
                        for kj in range(kw):
                            iw = j * stride + kj
                            for g in range(groups):
                                for ci in range(cpg):
                                    xv = xp[b, ih, iw, g * cpg + ci]
                                    for co in range(cog):
                                        y[b, i, j, g * cog + co] += xv * w[ki, kj, ci, g * cog + co]
    return y_arr


def conv2d_grad_input(floating[:, :, :, ::1] gy, floating[:, :, :, ::1] w,
                      padded_shape, int stride, int groups):
    cdef Py_ssize_t n = gy.shape[0], oh = gy.shape[1], ow = gy.shape[2], cout = gy.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], cpg = w.shape[2]
    cdef Py_ssize_t cog = cout // groups

    if floating is float:
        gx_arr = np.zeros(tuple(padded_shape), dtype=np.float32)
    else:
        gx_arr = np.zeros(tuple(padded_shape), dtype=np.float64)
    cdef floating[:, :, :, ::1] gxp = gx_arr

    cdef Py_ssize_t b, i, j, ki, kj, g, ci, co, ih, iw
    cdef floating gv
    with nogil:
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    for ki in range(kh):
                        ih = i * stride + ki
                        for kj in range(kw):
                            iw = j * stride + kj
                            for g in range(groups):
                                for co in range(cog):
                                    gv = gy[b, i, j, g * cog + co]
                                    for ci in range(cpg):
                                        gxp[b, ih, iw, g * cpg + ci] += gv * w[ki, kj, ci, g * cog + co]
    return gx_arr


def conv2d_grad_weight(floating[:, :, :, ::1] gy, floating[:, :, :, ::1] xp,
                       int kh, int kw, int stride, int groups):
    cdef Py_ssize_t n = gy.shape[0], oh = gy.shape[1], ow = gy.shape[2], cout = gy.shape[3]
    cdef Py_ssize_t cin = xp.shape[3]
    cdef Py_ssize_t cpg = cin // groups
    cdef Py_ssize_t cog = cout // groups

    if floating is float:
        gw_arr = np.zeros((kh, kw, cpg, cout), dtype=np.float32)
    else:
        gw_arr = np.zeros((kh, kw, cpg, cout), dtype=np.float64)
    cdef floating[:, :, :, ::1] gw = gw_arr

    cdef Py_ssize_t b, i, j, ki, kj, g, ci, co, ih, iw
    cdef floating xv
    with nogil:
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    for ki in range(kh):
                        ih = i * stride + ki
                        for kj in range(kw):
                            iw = j * stride + kj
                            for g in range(groups):
                                for ci in range(cpg):
                                    xv = xp[b, ih, iw, g * cpg + ci]
                                    for co in range(cog):
                                        gw[ki, kj, ci, g * cog + co] += xv * gy[b, i, j, g * cog + co]
    return gw_arr
