# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled blockwise 8-bit kernels; bitwise twin of ``_kernels_py``.

``roundf`` rounds half away from zero, which is what the numpy twin's
trunc-and-compare computes (the fractional part of a float is exact).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabsf, roundf

cnp.import_array()


cdef inline void _quantize(const float[::1] x, float[::1] absmax, float levels, float lo_clip,
                           Py_ssize_t block_size, bint signed_codes,
                           signed char[::1] scodes, unsigned char[::1] ucodes) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t b, i, lo, hi
    cdef float a, v, q
    for b in range(absmax.shape[0]):
        lo = b * block_size
        hi = lo + block_size
        if hi > n:
            hi = n
        a = <float>0.0
        if signed_codes:
            for i in range(lo, hi):
                v = fabsf(x[i])
                a = v if v > a else a
        else:
            for i in range(lo, hi):
                a = x[i] if x[i] > a else a
        absmax[b] = a
        if a == <float>0.0:
            for i in range(lo, hi):
                if signed_codes:
                    scodes[i] = 0
                else:
                    ucodes[i] = 0
            continue
        if signed_codes:
            for i in range(lo, hi):
                q = roundf((x[i] / a) * levels)
                q = levels if q > levels else q
                q = lo_clip if q < lo_clip else q
                scodes[i] = <signed char>q
        else:
            for i in range(lo, hi):
                q = roundf((x[i] / a) * levels)
                q = levels if q > levels else q
                q = lo_clip if q < lo_clip else q
                ucodes[i] = <unsigned char>q


def quantize_signed(flat, Py_ssize_t block_size):
    cdef const float[::1] x = np.ascontiguousarray(flat, dtype=np.float32).reshape(-1)
    cdef Py_ssize_t n = x.shape[0]
    codes_arr = np.empty(n, dtype=np.int8)
    absmax_arr = np.empty((n + block_size - 1) // block_size, dtype=np.float32)
    cdef signed char[::1] codes = codes_arr
    cdef float[::1] absmax = absmax_arr
    cdef unsigned char[::1] unused = np.empty(0, dtype=np.uint8)
    with nogil:
        _quantize(x, absmax, <float>127.0, -<float>127.0, block_size, True, codes, unused)
    return codes_arr, absmax_arr


def quantize_unsigned(flat, Py_ssize_t block_size):
    cdef const float[::1] x = np.ascontiguousarray(flat, dtype=np.float32).reshape(-1)
    cdef Py_ssize_t n = x.shape[0]
    codes_arr = np.empty(n, dtype=np.uint8)
    absmax_arr = np.empty((n + block_size - 1) // block_size, dtype=np.float32)
    cdef unsigned char[::1] codes = codes_arr
    cdef float[::1] absmax = absmax_arr
    cdef signed char[::1] unused = np.empty(0, dtype=np.int8)
    with nogil:
        _quantize(x, absmax, <float>255.0, <float>0.0, block_size, False, unused, codes)
    return codes_arr, absmax_arr


def dequantize_signed(codes_in, absmax_in, Py_ssize_t block_size):
    cdef const signed char[::1] codes = np.ascontiguousarray(codes_in, dtype=np.int8)
    cdef const float[::1] absmax = np.ascontiguousarray(absmax_in, dtype=np.float32)
    cdef Py_ssize_t n = codes.shape[0]
    out_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] out = out_arr
    cdef Py_ssize_t b, i, lo, hi
    cdef float s
    with nogil:
        for b in range(absmax.shape[0]):
            lo = b * block_size
            hi = lo + block_size
            if hi > n:
                hi = n
            s = absmax[b]
            for i in range(lo, hi):
                out[i] = (<float>codes[i] / <float>127.0) * s
    return out_arr


def dequantize_unsigned(codes_in, absmax_in, Py_ssize_t block_size):
    cdef const unsigned char[::1] codes = np.ascontiguousarray(codes_in, dtype=np.uint8)
    cdef const float[::1] absmax = np.ascontiguousarray(absmax_in, dtype=np.float32)
    cdef Py_ssize_t n = codes.shape[0]
    out_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] out = out_arr
    cdef Py_ssize_t b, i, lo, hi
    cdef float s
    with nogil:
        for b in range(absmax.shape[0]):
            lo = b * block_size
            hi = lo + block_size
            if hi > n:
                hi = n
            s = absmax[b]
            for i in range(lo, hi):
                out[i] = (<float>codes[i] / <float>255.0) * s
    return out_arr
