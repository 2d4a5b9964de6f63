# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im kernels.

Both operate on already padded, C-contiguous input and keep a fixed loop
order so results are bit-identical between runs and match the numpy
fallback exactly.
"""
import numpy as np
from cython cimport floating
from libc.string cimport memcpy


def im2col(floating[:, :, :, ::1] xp, int kh, int kw, int stride, int ho, int wo):
    cdef Py_ssize_t n = xp.shape[0]
    cdef Py_ssize_t c = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2]
    cdef Py_ssize_t wp = xp.shape[3]
    cdef Py_ssize_t b, ci, i, j, oy, ox
    if floating is float:
        out = np.empty((n, c * kh * kw, ho * wo), dtype=np.float32)
    else:
        out = np.empty((n, c * kh * kw, ho * wo), dtype=np.float64)
    cdef floating[:, :, ::1] cols = out
    cdef floating* src
    cdef floating* dst
    cdef floating* plane
    with nogil:
        for b in range(n):
            dst = &cols[b, 0, 0]
            for ci in range(c):
                plane = &xp[b, ci, 0, 0]
                for i in range(kh):
                    for j in range(kw):
                        for oy in range(ho):
                            src = plane + (oy * stride + i) * wp + j
                            if stride == 1:
                                memcpy(dst, src, wo * sizeof(floating))
                            else:
                                for ox in range(wo):
                                    dst[ox] = src[ox * stride]
                            dst += wo
    return out


def col2im(floating[:, :, ::1] cols, int c, int hp, int wp,
           int kh, int kw, int stride, int ho, int wo):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t b, ci, i, j, oy, ox
    if floating is float:
        out = np.zeros((n, c, hp, wp), dtype=np.float32)
    else:
        out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef floating[:, :, :, ::1] xp = out
    cdef floating* src
    cdef floating* dst
    cdef floating* plane
    with nogil:
        for b in range(n):
            src = &cols[b, 0, 0]
            for ci in range(c):
                plane = &xp[b, ci, 0, 0]
                for i in range(kh):
                    for j in range(kw):
                        for oy in range(ho):
                            dst = plane + (oy * stride + i) * wp + j
                            for ox in range(wo):
                                dst[ox * stride] += src[ox]
                            src += wo
    return out
