# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution hot kernels.

Same contract as the numpy backend: padded input in, fixed per-element
accumulation order.  Parallel loops split work by output slice only (one
writer per element, no shared reductions), so results are bit-identical for
any thread count.
"""

import numpy as np

cimport cython
from cython.parallel cimport prange

ctypedef fused floating:
    float
    double

NAME = "cython"


def conv_forward(xp, w, int stride):
    xp = np.ascontiguousarray(xp)
    w = np.ascontiguousarray(w)
    n, ci, hp, wp = xp.shape
    co, _, kh, kw = w.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, co, ho, wo), dtype=xp.dtype)
    if xp.dtype == np.float32:
        _forward[float](xp, w, out, stride)
    else:
        _forward[double](xp, w, out, stride)
    return out


def conv_grad_input(gy, w, xp_shape, int stride):
    gy = np.ascontiguousarray(gy)
    w = np.ascontiguousarray(w)
    gxp = np.zeros(xp_shape, dtype=gy.dtype)
    if gy.dtype == np.float32:
        _grad_input[float](gy, w, gxp, stride)
    else:
        _grad_input[double](gy, w, gxp, stride)
    return gxp


def conv_grad_weight(gy, xp, w_shape, int stride):
    gy = np.ascontiguousarray(gy)
    xp = np.ascontiguousarray(xp)
    gw = np.zeros(w_shape, dtype=gy.dtype)
    if gy.dtype == np.float32:
        _grad_weight[float](gy, xp, gw, stride)
    else:
        _grad_weight[double](gy, xp, gw, stride)
    return gw


cdef void _forward(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] w,
                   floating[:, :, :, ::1] out, int stride) noexcept:
    cdef Py_ssize_t n = out.shape[0], co = out.shape[1], ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t ci = xp.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t b, o, c, dy, dx, oy, ox, iy
    cdef floating wv
    with nogil:
        for o in prange(co, schedule='static'):
            for b in range(n):
                for c in range(ci):
                    for dy in range(kh):
                        for dx in range(kw):
                            wv = w[o, c, dy, dx]
                            for oy in range(ho):
                                iy = oy * stride + dy
                                for ox in range(wo):
                                    out[b, o, oy, ox] += wv * xp[b, c, iy, ox * stride + dx]


cdef void _grad_input(floating[:, :, :, ::1] gy, floating[:, :, :, ::1] w,
                      floating[:, :, :, ::1] gxp, int stride) noexcept:
    cdef Py_ssize_t n = gy.shape[0], co = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t ci = gxp.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t b, o, c, dy, dx, oy, ox, iy
    cdef floating wv
    with nogil:
        for c in prange(ci, schedule='static'):
            for b in range(n):
                for o in range(co):
                    for dy in range(kh):
                        for dx in range(kw):
                            wv = w[o, c, dy, dx]
                            for oy in range(ho):
                                iy = oy * stride + dy
                                for ox in range(wo):
                                    gxp[b, c, iy, ox * stride + dx] += wv * gy[b, o, oy, ox]


cdef void _grad_weight(floating[:, :, :, ::1] gy, floating[:, :, :, ::1] xp,
                       floating[:, :, :, ::1] gw, int stride) noexcept:
    cdef Py_ssize_t n = gy.shape[0], co = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t ci = xp.shape[1], kh = gw.shape[2], kw = gw.shape[3]
    cdef Py_ssize_t b, o, c, dy, dx, oy, ox, iy, wo4
    cdef floating a0, a1, a2, a3
    wo4 = wo - (wo % 4)
    with nogil:
        for o in prange(co, schedule='static'):
            for c in range(ci):
                for dy in range(kh):
                    for dx in range(kw):
                        # Four independent accumulator chains (fixed order,
                        # deterministic) so the reduction pipelines.
                        a0 = 0; a1 = 0; a2 = 0; a3 = 0
                        for b in range(n):
                            for oy in range(ho):
                                iy = oy * stride + dy
                                for ox in range(0, wo4, 4):
                                    a0 = a0 + gy[b, o, oy, ox] * xp[b, c, iy, ox * stride + dx]
                                    a1 = a1 + gy[b, o, oy, ox + 1] * xp[b, c, iy, (ox + 1) * stride + dx]
                                    a2 = a2 + gy[b, o, oy, ox + 2] * xp[b, c, iy, (ox + 2) * stride + dx]
                                    a3 = a3 + gy[b, o, oy, ox + 3] * xp[b, c, iy, (ox + 3) * stride + dx]
                                for ox in range(wo4, wo):
                                    a0 = a0 + gy[b, o, oy, ox] * xp[b, c, iy, ox * stride + dx]
                        gw[o, c, dy, dx] = (a0 + a1) + (a2 + a3)
