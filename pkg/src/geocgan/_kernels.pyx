# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MLP kernels.  Same contract as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, exp, log1p, expm1, fabs

cnp.import_array()

DEF TANH = 0


cdef inline double _act(double x, int act) nogil:
    if act == TANH:
        return tanh(x)
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _dact(double post, int act) nogil:
    if act == TANH:
        return 1.0 - post * post
    return -expm1(-post)


def mlp_forward(double[::1] params, sizes, X, int act):
    cdef long[::1] sz = np.ascontiguousarray(sizes, dtype=np.int64)
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t N = Xv.shape[0], L = sz.shape[0] - 1
    cdef Py_ssize_t total = 0, l
    for l in range(L + 1):
        total += sz[l]
    out = np.empty((N, total), dtype=np.float64)
    cdef double[:, ::1] A = out
    cdef Py_ssize_t n, i, o, off, col_in, col_out, n_in, n_out
    cdef double s
    with nogil:
        for n in range(N):
            for i in range(sz[0]):
                A[n, i] = Xv[n, i]
            off = 0
            col_in = 0
            for l in range(L):
                n_in = sz[l]
                n_out = sz[l + 1]
                col_out = col_in + n_in
                for o in range(n_out):
                    s = params[off + n_out * n_in + o]
                    for i in range(n_in):
                        s = s + params[off + o * n_in + i] * A[n, col_in + i]
                    if l != L - 1:
                        s = _act(s, act)
                    A[n, col_out + o] = s
                off += n_out * n_in + n_out
                col_in = col_out
    return out


def mlp_backward(double[::1] params, sizes, acts, gY, int act):
    cdef long[::1] sz = np.ascontiguousarray(sizes, dtype=np.int64)
    cdef double[:, ::1] A = np.ascontiguousarray(acts, dtype=np.float64)
    cdef double[:, ::1] G0 = np.ascontiguousarray(gY, dtype=np.float64)
    cdef Py_ssize_t N = A.shape[0], L = sz.shape[0] - 1, P = params.shape[0]
    cdef Py_ssize_t maxw = 0, l
    for l in range(L + 1):
        if sz[l] > maxw:
            maxw = sz[l]
    cdef Py_ssize_t[::1] offs = np.empty(L, dtype=np.intp)
    cdef Py_ssize_t[::1] cols = np.empty(L + 1, dtype=np.intp)
    cdef Py_ssize_t off = 0, col = 0
    for l in range(L):
        offs[l] = off
        off += sz[l + 1] * sz[l] + sz[l + 1]
    for l in range(L + 1):
        cols[l] = col
        col += sz[l]
    gp_arr = np.zeros(P, dtype=np.float64)
    gx_arr = np.empty((N, sz[0]), dtype=np.float64)
    cdef double[::1] gp = gp_arr
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] g = np.empty(maxw, dtype=np.float64)
    cdef double[::1] gnext = np.empty(maxw, dtype=np.float64)
    cdef Py_ssize_t n, i, o, n_in, n_out
    cdef double go, s
    with nogil:
        for n in range(N):
            for o in range(sz[L]):
                g[o] = G0[n, o]
            for l in range(L - 1, -1, -1):
                n_in = sz[l]
                n_out = sz[l + 1]
                if l != L - 1:
                    for o in range(n_out):
                        g[o] = g[o] * _dact(A[n, cols[l + 1] + o], act)
                for i in range(n_in):
                    gnext[i] = 0.0
                for o in range(n_out):
                    go = g[o]
                    gp[offs[l] + n_out * n_in + o] += go
                    if go != 0.0:
                        for i in range(n_in):
                            gp[offs[l] + o * n_in + i] += go * A[n, cols[l] + i]
                            gnext[i] += go * params[offs[l] + o * n_in + i]
                for i in range(n_in):
                    g[i] = gnext[i]
            for i in range(sz[0]):
                gx[n, i] = g[i]
    return gp_arr, gx_arr


def mlp_jacobian(double[::1] params, sizes, X, int act, int ncols):
    cdef long[::1] sz = np.ascontiguousarray(sizes, dtype=np.int64)
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t N = Xv.shape[0], L = sz.shape[0] - 1
    cdef Py_ssize_t maxw = 0, l
    for l in range(L + 1):
        if sz[l] > maxw:
            maxw = sz[l]
    out = np.empty((N, sz[L], ncols), dtype=np.float64)
    cdef double[:, :, ::1] Jout = out
    cdef double[::1] h = np.empty(maxw, dtype=np.float64)
    cdef double[::1] hn = np.empty(maxw, dtype=np.float64)
    cdef double[:, ::1] J = np.empty((maxw, ncols), dtype=np.float64)
    cdef double[:, ::1] Jn = np.empty((maxw, ncols), dtype=np.float64)
    cdef Py_ssize_t n, i, o, c, off, n_in, n_out
    cdef double s, w, d
    with nogil:
        for n in range(N):
            for i in range(sz[0]):
                h[i] = Xv[n, i]
                for c in range(ncols):
                    J[i, c] = 1.0 if i == c else 0.0
            off = 0
            for l in range(L):
                n_in = sz[l]
                n_out = sz[l + 1]
                for o in range(n_out):
                    s = params[off + n_out * n_in + o]
                    for c in range(ncols):
                        Jn[o, c] = 0.0
                    for i in range(n_in):
                        w = params[off + o * n_in + i]
                        s = s + w * h[i]
                        if w != 0.0:
                            for c in range(ncols):
                                Jn[o, c] += w * J[i, c]
                    if l != L - 1:
                        s = _act(s, act)
                        d = _dact(s, act)
                        for c in range(ncols):
                            Jn[o, c] *= d
                    hn[o] = s
                for o in range(n_out):
                    h[o] = hn[o]
                    for c in range(ncols):
                        J[o, c] = Jn[o, c]
                off += n_out * n_in + n_out
            for o in range(sz[L]):
                for c in range(ncols):
                    Jout[n, o, c] = J[o, c]
    return out
