# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pairwise kernels; see ``_pykernels`` for the reference versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs

cnp.import_array()


def ve_fixed_point(const double[:, :, ::1] d, const cnp.intp_t[::1] rows,
                   const cnp.intp_t[::1] cols, log_pi, tau_init,
                   int max_iter, double tol, double damping, double floor):
    cdef Py_ssize_t n = tau_init.shape[0]
    cdef Py_ssize_t Q = tau_init.shape[1]
    cdef Py_ssize_t m = d.shape[0]
    tau_arr = np.array(tau_init, dtype=np.float64, order="C", copy=True)
    lp_arr = np.ascontiguousarray(log_pi, dtype=np.float64)
    s_arr = np.empty((n, Q), dtype=np.float64)
    cdef double[:, ::1] tau = tau_arr
    cdef double[:, ::1] s = s_arr
    cdef const double[::1] lp = lp_arr
    cdef Py_ssize_t e, i, j, q, l
    cdef double acc_i, mx, tot, v, fp, diff
    cdef double residual = np.inf
    cdef double scale = 1.0 - Q * floor
    cdef int it = 0
    while it < max_iter:
        it += 1
        for i in range(n):
            for q in range(Q):
                s[i, q] = lp[q]
        for e in range(m):
            i = rows[e]
            j = cols[e]
            for q in range(Q):
                acc_i = 0.0
                for l in range(Q):
                    acc_i += d[e, q, l] * tau[j, l]
                    s[j, l] += d[e, q, l] * tau[i, q]
                s[i, q] += acc_i
        residual = 0.0
        for i in range(n):
            mx = s[i, 0]
            for q in range(1, Q):
                if s[i, q] > mx:
                    mx = s[i, q]
            tot = 0.0
            for q in range(Q):
                v = exp(s[i, q] - mx)
                s[i, q] = v
                tot += v
            for q in range(Q):
                fp = floor + scale * s[i, q] / tot
                diff = fabs(fp - tau[i, q])
                if diff > residual:
                    residual = diff
                s[i, q] = fp
        for i in range(n):
            for q in range(Q):
                tau[i, q] = (1.0 - damping) * s[i, q] + damping * tau[i, q]
        if residual < tol:
            break
    return tau_arr, it, residual


def pair_moments(const double[::1] x, const double[:, :, ::1] rho,
                 const cnp.intp_t[::1] rows, const cnp.intp_t[::1] cols,
                 const double[:, ::1] tau):
    cdef Py_ssize_t m = rho.shape[0]
    cdef Py_ssize_t Q = rho.shape[1]
    N_arr = np.zeros((Q, Q))
    K_arr = np.zeros((Q, Q))
    Kx_arr = np.zeros((Q, Q))
    Kx2_arr = np.zeros((Q, Q))
    cdef double[:, ::1] N = N_arr
    cdef double[:, ::1] K = K_arr
    cdef double[:, ::1] Kx = Kx_arr
    cdef double[:, ::1] Kx2 = Kx2_arr
    cdef double bar = 0.0, barx2 = 0.0, bar_e, t, tr, xe, x2
    cdef Py_ssize_t e, i, j, q, l
    for e in range(m):
        i = rows[e]
        j = cols[e]
        xe = x[e]
        x2 = xe * xe
        bar_e = 0.0
        for q in range(Q):
            for l in range(Q):
                t = tau[i, q] * tau[j, l]
                tr = t * rho[e, q, l]
                N[q, l] += t
                K[q, l] += tr
                Kx[q, l] += tr * xe
                Kx2[q, l] += tr * x2
                bar_e += t - tr
        bar += bar_e
        barx2 += bar_e * x2
    return N_arr, K_arr, Kx_arr, Kx2_arr, bar, barx2


def pair_contract(const double[:, :, ::1] c, const cnp.intp_t[::1] rows,
                  const cnp.intp_t[::1] cols, const double[:, ::1] tau):
    cdef Py_ssize_t m = c.shape[0]
    cdef Py_ssize_t Q = c.shape[1]
    cdef double total = 0.0, acc
    cdef Py_ssize_t e, i, j, q, l
    for e in range(m):
        i = rows[e]
        j = cols[e]
        for q in range(Q):
            acc = 0.0
            for l in range(Q):
                acc += c[e, q, l] * tau[j, l]
            total += tau[i, q] * acc
    return total
