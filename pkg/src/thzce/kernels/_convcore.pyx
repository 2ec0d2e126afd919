# Compiled conv kernels: same-padded 2D cross-correlation, channels last.
# Mirrors conv_numpy semantics; loops are ordered so the innermost axis is the
# contiguous channel axis of whichever array is being accumulated.

import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] kernel, double[::1] bias):
    cdef Py_ssize_t B = x.shape[0], S = x.shape[1], Q = x.shape[2], Cin = x.shape[3]
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1], Cout = kernel.shape[3]
    if kernel.shape[2] != Cin:
        raise ValueError("kernel input channels do not match input")
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    out = np.empty((B, S, Q, Cout), dtype=np.float64)
    cdef double[:, :, :, ::1] y = out
    cdef Py_ssize_t b, s, q, di, dj, ci, co, si, qi, dj_lo, dj_hi
    cdef double xv
    for b in range(B):
        for s in range(S):
            for q in range(Q):
                for co in range(Cout):
                    y[b, s, q, co] = bias[co]
                for di in range(kh):
                    si = s + di - ph
                    if si < 0 or si >= S:
                        continue
                    dj_lo = pw - q if q < pw else 0
                    dj_hi = Q - q + pw if q > Q - 1 - pw else kw
                    for dj in range(dj_lo, dj_hi):
                        qi = q + dj - pw
                        for ci in range(Cin):
                            xv = x[b, si, qi, ci]
                            if xv != 0.0:
                                for co in range(Cout):
                                    y[b, s, q, co] += xv * kernel[di, dj, ci, co]
    return out


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] kernel,
                    double[:, :, :, ::1] grad_out):
    cdef Py_ssize_t B = x.shape[0], S = x.shape[1], Q = x.shape[2], Cin = x.shape[3]
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1], Cout = kernel.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    dx_arr = np.zeros((B, S, Q, Cin), dtype=np.float64)
    dk_arr = np.zeros((kh, kw, Cin, Cout), dtype=np.float64)
    db_arr = np.zeros(Cout, dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef double[:, :, :, ::1] dk = dk_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t b, s, q, di, dj, ci, co, si, qi, dj_lo, dj_hi
    cdef double acc, xv
    for b in range(B):
        for s in range(S):
            for q in range(Q):
                for co in range(Cout):
                    db[co] += grad_out[b, s, q, co]
                for di in range(kh):
                    si = s + di - ph
                    if si < 0 or si >= S:
                        continue
                    dj_lo = pw - q if q < pw else 0
                    dj_hi = Q - q + pw if q > Q - 1 - pw else kw
                    for dj in range(dj_lo, dj_hi):
                        qi = q + dj - pw
                        for ci in range(Cin):
                            xv = x[b, si, qi, ci]
                            acc = 0.0
                            for co in range(Cout):
                                acc += grad_out[b, s, q, co] * kernel[di, dj, ci, co]
                                dk[di, dj, ci, co] += grad_out[b, s, q, co] * xv
                            dx[b, si, qi, ci] += acc
    return dx_arr, dk_arr, db_arr
