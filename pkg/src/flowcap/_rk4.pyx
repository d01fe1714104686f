# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 kernel for lowered fields; mirrors ``_kernels.rk4_lowered``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs, sin, cos, pow, isnan
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline double _act(long code, double p0, double p1, double u) nogil:
    cdef double z, au
    if code == 0:
        return u if u > 0 else 0.0
    if code == 1:
        return -u if u > 0 else 0.0
    if code == 2:
        return u if u > 0 else p0 * u
    if code == 3:
        au = p0 * u
        return log1p(exp(-fabs(au))) + (au if au > 0 else 0.0)
    if code == 4:
        return sin(u)
    if code == 5:
        return cos(u)
    if code == 6:
        return pow(u, p0)
    if code == 7:
        z = (u - p0) / p1
        return exp(-z * z)
    return u * u


cdef inline double _dact(long code, double p0, double p1, double u) nogil:
    cdef double z
    if code == 0:
        return 1.0 if u > 0 else 0.0
    if code == 1:
        return -1.0 if u > 0 else 0.0
    if code == 2:
        return 1.0 if u > 0 else p0
    if code == 3:
        return p0 / (1.0 + exp(-p0 * u))
    if code == 4:
        return cos(u)
    if code == 5:
        return -sin(u)
    if code == 6:
        return p0 * pow(u, p0 - 1.0)
    if code == 7:
        z = (u - p0) / p1
        return -2.0 * z / p1 * exp(-z * z)
    return 2.0 * u


cdef inline double _rhs(const double* x, double* out, Py_ssize_t d, Py_ssize_t K,
                        const double[:, ::1] A, const double[::1] c,
                        const double[:, :, ::1] S, const double[:, :, ::1] W,
                        const double[:, ::1] B, const long[::1] codes,
                        const double[:, ::1] params, const double[:, ::1] TW,
                        double trA, double* u, double* a, bint want_div) nogil:
    cdef Py_ssize_t i, j, k
    cdef double s, div = trA
    for i in range(d):
        s = c[i]
        for j in range(d):
            s += A[i, j] * x[j]
        out[i] = s
    for k in range(K):
        for i in range(d):
            s = B[k, i]
            for j in range(d):
                s += W[k, i, j] * x[j]
            u[i] = s
            a[i] = _act(codes[k], params[k, 0], params[k, 1], s)
            if want_div:
                div += _dact(codes[k], params[k, 0], params[k, 1], s) * TW[k, i]
        for i in range(d):
            s = 0.0
            for j in range(d):
                s += S[k, i, j] * a[j]
            out[i] += s
    return div


def rk4_lowered(X0, A_, c_, S_, W_, B_, codes_, params_, TW_, double dt, long nsteps,
                double guard, bint track_logdet):
    cdef double[:, ::1] X = np.array(X0, dtype=np.float64, order="C", copy=True)
    cdef const double[:, ::1] A = np.ascontiguousarray(A_, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(c_, dtype=np.float64)
    cdef const double[:, :, ::1] S = np.ascontiguousarray(S_, dtype=np.float64)
    cdef const double[:, :, ::1] W = np.ascontiguousarray(W_, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(B_, dtype=np.float64)
    cdef const long[::1] codes = np.ascontiguousarray(codes_, dtype=np.int_)
    cdef const double[:, ::1] params = np.ascontiguousarray(params_, dtype=np.float64)
    cdef const double[:, ::1] TW = np.ascontiguousarray(TW_, dtype=np.float64)
    cdef Py_ssize_t m = X.shape[0], d = X.shape[1], K = codes.shape[0]
    cdef double[::1] ld = np.zeros(m)
    cdef Py_ssize_t p, i
    cdef long step, fail_step = nsteps
    cdef int status = 0
    cdef double trA = 0.0, d1, d2, d3, d4, h6 = dt / 6.0
    for i in range(d):
        trA += A[i, i]
    cdef double* buf = <double*>malloc(12 * d * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double *x = buf, *k1 = buf + d, *k2 = buf + 2 * d, *k3 = buf + 3 * d
    cdef double *k4 = buf + 4 * d, *tmp = buf + 5 * d, *u = buf + 6 * d, *a = buf + 7 * d
    try:
        with nogil:
            for p in range(m):
                for i in range(d):
                    x[i] = X[p, i]
                for step in range(nsteps):
                    d1 = _rhs(x, k1, d, K, A, c, S, W, B, codes, params, TW, trA, u, a, track_logdet)
                    for i in range(d):
                        tmp[i] = x[i] + 0.5 * dt * k1[i]
                    d2 = _rhs(tmp, k2, d, K, A, c, S, W, B, codes, params, TW, trA, u, a, track_logdet)
                    for i in range(d):
                        tmp[i] = x[i] + 0.5 * dt * k2[i]
                    d3 = _rhs(tmp, k3, d, K, A, c, S, W, B, codes, params, TW, trA, u, a, track_logdet)
                    for i in range(d):
                        tmp[i] = x[i] + dt * k3[i]
                    d4 = _rhs(tmp, k4, d, K, A, c, S, W, B, codes, params, TW, trA, u, a, track_logdet)
                    for i in range(d):
                        x[i] += h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                    if track_logdet:
                        ld[p] += h6 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
                    for i in range(d):
                        if isnan(x[i]) or fabs(x[i]) > guard:
                            status = 1
                    if status:
                        if step < fail_step:
                            fail_step = step
                        break
                for i in range(d):
                    X[p, i] = x[i]
                if status:
                    break
    finally:
        free(buf)
    return np.asarray(X), np.asarray(ld), status, fail_step
