# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled conv/pool kernels: the training loop's hot inner loops.

Same contracts as numpy_backend; loops are arranged so the innermost
index runs over the contiguous last axis, which lets the C compiler
vectorize the accumulation.
"""

import numpy as np

BACKEND_NAME = "compiled"


def conv2d_forward(x, w, b):
    """x (N,C,H,W), w (O,C,kh,kw), b (O,) -> y (N,O,H-kh+1,W-kw+1)."""
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3]
    cdef Py_ssize_t O = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3]
    cdef Py_ssize_t OH = H - kh + 1, OW = W - kw + 1
    y = np.empty((N, O, OH, OW), dtype=np.float64)
    cdef double[:, :, :, ::1] yv = y
    cdef Py_ssize_t n, o, c, i, j, p, q
    cdef double wcoef, bias
    for n in range(N):
        for o in range(O):
            bias = bv[o]
            for i in range(OH):
                for j in range(OW):
                    yv[n, o, i, j] = bias
            for c in range(C):
                for p in range(kh):
                    for q in range(kw):
                        wcoef = wv[o, c, p, q]
                        for i in range(OH):
                            for j in range(OW):
                                yv[n, o, i, j] += wcoef * xv[n, c, i + p, j + q]
    return y


def conv2d_backward(x, w, dy):
    """Gradients of conv2d_forward: returns (dx, dw, db)."""
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, :, :, ::1] dyv = np.ascontiguousarray(dy, dtype=np.float64)
    cdef Py_ssize_t N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3]
    cdef Py_ssize_t O = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3]
    cdef Py_ssize_t OH = H - kh + 1, OW = W - kw + 1
    dx = np.zeros((N, C, H, W), dtype=np.float64)
    dw = np.zeros((O, C, kh, kw), dtype=np.float64)
    db = np.zeros(O, dtype=np.float64)
    cdef double[:, :, :, ::1] dxv = dx
    cdef double[:, :, :, ::1] dwv = dw
    cdef double[::1] dbv = db
    cdef Py_ssize_t n, o, c, i, j, p, q
    cdef double acc, g, wcoef
    for o in range(O):
        acc = 0.0
        for n in range(N):
            for i in range(OH):
                for j in range(OW):
                    acc += dyv[n, o, i, j]
        dbv[o] = acc
    for o in range(O):
        for c in range(C):
            for p in range(kh):
                for q in range(kw):
                    acc = 0.0
                    for n in range(N):
                        for i in range(OH):
                            for j in range(OW):
                                acc += dyv[n, o, i, j] * xv[n, c, i + p, j + q]
                    dwv[o, c, p, q] = acc
    for n in range(N):
        for o in range(O):
            for c in range(C):
                for p in range(kh):
                    for q in range(kw):
                        wcoef = wv[o, c, p, q]
                        for i in range(OH):
                            for j in range(OW):
                                dxv[n, c, i + p, j + q] += wcoef * dyv[n, o, i, j]
    return dx, dw, db


def maxpool2_forward(x):
    """2x2/stride-2 max pool with first-position tie-break; returns (y, idx)."""
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3]
    cdef Py_ssize_t H2 = H // 2, W2 = W // 2
    y = np.empty((N, C, H2, W2), dtype=np.float64)
    idx = np.empty((N, C, H2, W2), dtype=np.int64)
    cdef double[:, :, :, ::1] yv = y
    cdef long long[:, :, :, ::1] iv = idx
    cdef Py_ssize_t n, c, i, j
    cdef double best, cand
    cdef long long k
    for n in range(N):
        for c in range(C):
            for i in range(H2):
                for j in range(W2):
                    best = xv[n, c, 2 * i, 2 * j]
                    k = 0
                    cand = xv[n, c, 2 * i, 2 * j + 1]
                    if cand > best:
                        best = cand
                        k = 1
                    cand = xv[n, c, 2 * i + 1, 2 * j]
                    if cand > best:
                        best = cand
                        k = 2
                    cand = xv[n, c, 2 * i + 1, 2 * j + 1]
                    if cand > best:
                        best = cand
                        k = 3
                    yv[n, c, i, j] = best
                    iv[n, c, i, j] = k
    return y, idx


def maxpool2_backward(idx, dy, h, w):
    cdef long long[:, :, :, ::1] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef double[:, :, :, ::1] dyv = np.ascontiguousarray(dy, dtype=np.float64)
    cdef Py_ssize_t N = dyv.shape[0], C = dyv.shape[1], H2 = dyv.shape[2], W2 = dyv.shape[3]
    cdef Py_ssize_t H = h, W = w
    dx = np.zeros((N, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] dxv = dx
    cdef Py_ssize_t n, c, i, j
    cdef long long k
    for n in range(N):
        for c in range(C):
            for i in range(H2):
                for j in range(W2):
                    k = iv[n, c, i, j]
                    dxv[n, c, 2 * i + (k >> 1), 2 * j + (k & 1)] += dyv[n, c, i, j]
    return dx
