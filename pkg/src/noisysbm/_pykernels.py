"""Pure numpy implementations of the pairwise kernels.

Same signatures as the compiled ``_ckernels`` module. ``d`` and ``c`` arrays
are per-edge ``(m, Q, Q)`` tables indexed ``[e, group of rows[e], group of cols[e]]``.
"""
import numpy as np


def _pair_weights(tau, rows, cols):
    return tau[rows, :, None] * tau[cols, None, :]


def _dense_operator(d, rows, cols, n):
    Q = d.shape[1]
    D = np.zeros((n, n, Q, Q))
    D[rows, cols] = d
    D[cols, rows] = d.transpose(0, 2, 1)
    return D.transpose(0, 2, 1, 3).reshape(n * Q, n * Q)


def ve_fixed_point(d, rows, cols, log_pi, tau, max_iter, tol, damping, floor):
    n, Q = tau.shape
    tau = np.array(tau, dtype=float, copy=True)
    M = _dense_operator(d, rows, cols, n)
    log_pi = np.asarray(log_pi, dtype=float)
    residual = np.inf
    it = 0
    while it < max_iter:
        it += 1
        s = (M @ tau.ravel()).reshape(n, Q) + log_pi
        s -= s.max(axis=1, keepdims=True)
        p = np.exp(s)
        p /= p.sum(axis=1, keepdims=True)
        fp = floor + (1.0 - Q * floor) * p
        residual = float(np.max(np.abs(fp - tau)))
        tau = (1.0 - damping) * fp + damping * tau
        if residual < tol:
            break
    return tau, it, residual


def pair_moments(x, rho, rows, cols, tau):
    T = _pair_weights(tau, rows, cols)
    Tr = T * rho
    Tn = T - Tr
    x = np.asarray(x, dtype=float)
    x2 = x * x
    N = T.sum(axis=0)
    K = Tr.sum(axis=0)
    Kx = np.tensordot(x, Tr, axes=(0, 0))
    Kx2 = np.tensordot(x2, Tr, axes=(0, 0))
    bar = Tn.sum(axis=(1, 2))
    return N, K, Kx, Kx2, float(bar.sum()), float(bar @ x2)


def pair_contract(c, rows, cols, tau):
    return float(np.sum(_pair_weights(tau, rows, cols) * c))
