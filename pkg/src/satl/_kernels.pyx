# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: conv reshuffles, 2x2 max pooling, PRNG bulk fills.

Bit-compatible with the numpy fallback in _kernels_py: identical window
ordering, identical (ki, kj)-outer accumulation in col2im, identical
xoshiro256** stream and Box-Muller float derivation through the same libm.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, log, sin, sqrt
from libc.stdint cimport uint8_t, uint64_t
from libc.string cimport memcpy

cnp.import_array()

ctypedef fused real:
    float
    double

cdef double _INV_2_53 = 1.0 / 9007199254740992.0
cdef double _TWO_PI = 6.283185307179586476925286766559


# ---------------------------------------------------------------------------
# convolution reshuffles


def im2col(real[:, :, :, ::1] xp, int kh, int kw, int stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], h = xp.shape[2], w = xp.shape[3]
    cdef Py_ssize_t oh = (h - kh) // stride + 1
    cdef Py_ssize_t ow = (w - kw) // stride + 1
    cdef Py_ssize_t ck = c * kh * kw

    if real is float:
        out_np = np.empty((ck, n * oh * ow), dtype=np.float32)
    else:
        out_np = np.empty((ck, n * oh * ow), dtype=np.float64)
    cdef real[:, ::1] out = out_np

    # (ki, kj)-outer fill: reads sweep xp nearly sequentially and each
    # destination run is one contiguous memcpy, so the fill stays
    # memory-bound instead of gather-bound
    cdef Py_ssize_t bi, oi, oj, ci, ki, kj, row, base, src_h
    cdef const real* src
    cdef real* dst
    for ki in range(kh):
        for kj in range(kw):
            for bi in range(n):
                for ci in range(c):
                    row = (ci * kh + ki) * kw + kj
                    for oi in range(oh):
                        base = (bi * oh + oi) * ow
                        src_h = oi * stride + ki
                        src = &xp[bi, ci, src_h, kj]
                        dst = &out[row, base]
                        if stride == 1:
                            memcpy(dst, src, ow * sizeof(real))
                        else:
                            for oj in range(ow):
                                dst[oj] = src[oj * stride]
    return out_np


def col2im(real[:, ::1] cols, int n, int c, int h, int w, int kh, int kw, int stride):
    cdef Py_ssize_t oh = (h - kh) // stride + 1
    cdef Py_ssize_t ow = (w - kw) // stride + 1

    if real is float:
        out_np = np.zeros((n, c, h, w), dtype=np.float32)
    else:
        out_np = np.zeros((n, c, h, w), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_np

    # per output element the (ki, kj) contributions accumulate in the same
    # order as the numpy fallback, so results match bit-for-bit
    cdef Py_ssize_t ki, kj, bi, ci, oi, oj, row, base, dst_h
    cdef const real* src
    cdef real* dst
    for ci in range(c):
        for ki in range(kh):
            for kj in range(kw):
                row = (ci * kh + ki) * kw + kj
                for bi in range(n):
                    for oi in range(oh):
                        base = (bi * oh + oi) * ow
                        dst_h = ki + oi * stride
                        src = &cols[row, base]
                        dst = &out[bi, ci, dst_h, kj]
                        if stride == 1:
                            for oj in range(ow):
                                dst[oj] += src[oj]
                        else:
                            for oj in range(ow):
                                dst[oj * stride] += src[oj]
    return out_np


# ---------------------------------------------------------------------------
# 2x2 max pooling


def maxpool2_forward(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = h // 2, ow = w // 2

    if real is float:
        out_np = np.empty((n, c, oh, ow), dtype=np.float32)
    else:
        out_np = np.empty((n, c, oh, ow), dtype=np.float64)
    idx_np = np.empty((n, c, oh, ow), dtype=np.uint8)
    cdef real[:, :, :, ::1] out = out_np
    cdef uint8_t[:, :, :, ::1] idx = idx_np

    cdef Py_ssize_t bi, ci, oi, oj, hi, wj
    cdef real v0, v1, v2, v3, best
    cdef uint8_t k
    for bi in range(n):
        for ci in range(c):
            for oi in range(oh):
                hi = oi * 2
                for oj in range(ow):
                    wj = oj * 2
                    v0 = x[bi, ci, hi, wj]
                    v1 = x[bi, ci, hi, wj + 1]
                    v2 = x[bi, ci, hi + 1, wj]
                    v3 = x[bi, ci, hi + 1, wj + 1]
                    best = v0
                    k = 0
                    if v1 > best:
                        best = v1
                        k = 1
                    if v2 > best:
                        best = v2
                        k = 2
                    if v3 > best:
                        best = v3
                        k = 3
                    out[bi, ci, oi, oj] = best
                    idx[bi, ci, oi, oj] = k
    return out_np, idx_np


def maxpool2_backward(real[:, :, :, ::1] g, uint8_t[:, :, :, ::1] idx):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], oh = g.shape[2], ow = g.shape[3]

    if real is float:
        out_np = np.zeros((n, c, oh * 2, ow * 2), dtype=np.float32)
    else:
        out_np = np.zeros((n, c, oh * 2, ow * 2), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_np

    cdef Py_ssize_t bi, ci, oi, oj
    cdef uint8_t k
    for bi in range(n):
        for ci in range(c):
            for oi in range(oh):
                for oj in range(ow):
                    k = idx[bi, ci, oi, oj]
                    out[bi, ci, oi * 2 + (k >> 1), oj * 2 + (k & 1)] = g[bi, ci, oi, oj]
    return out_np


# ---------------------------------------------------------------------------
# xoshiro256** bulk generation


cdef inline uint64_t _rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


cdef inline uint64_t _next(uint64_t* s) nogil:
    cdef uint64_t result = _rotl(s[1] * 5, 7) * 9
    cdef uint64_t t = s[1] << 17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


def prng_fill_uniform(uint64_t[::1] state, double[::1] out, bint bounded):
    cdef uint64_t s[4]
    cdef Py_ssize_t i, n = out.shape[0]
    cdef uint64_t x
    s[0] = state[0]; s[1] = state[1]; s[2] = state[2]; s[3] = state[3]
    if bounded:
        for i in range(n):
            x = _next(s)
            out[i] = <double>((x >> 11) + 1) * _INV_2_53
    else:
        for i in range(n):
            x = _next(s)
            out[i] = <double>(x >> 11) * _INV_2_53
    state[0] = s[0]; state[1] = s[1]; state[2] = s[2]; state[3] = s[3]


def prng_fill_normal(uint64_t[::1] state, double[::1] out):
    cdef uint64_t s[4]
    cdef Py_ssize_t i = 0, n = out.shape[0]
    cdef uint64_t x
    cdef double u1, u2, r, theta
    s[0] = state[0]; s[1] = state[1]; s[2] = state[2]; s[3] = state[3]
    while i < n:
        x = _next(s)
        u1 = <double>((x >> 11) + 1) * _INV_2_53
        x = _next(s)
        u2 = <double>(x >> 11) * _INV_2_53
        r = sqrt(-2.0 * log(u1))
        theta = _TWO_PI * u2
        out[i] = r * cos(theta)
        if i + 1 < n:
            out[i + 1] = r * sin(theta)
        i += 2
    state[0] = s[0]; state[1] = s[1]; state[2] = s[2]; state[3] = s[3]
