"""Multiple-testing engine: rejection regions, the Q function, q-values and the BH family."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .model import ModelParams, ObservationMatrix, edge_pairs, p_value, pi0_pi1

A_ZERO_TOL = 1e-12
THRESHOLD_TOL = 1e-10
ALPHA_STAR_OFFSET = 1e-9


class SubcriticalAlphaError(ValueError):
    """Requested level lies at or below the critical level of the parameter."""

    def __init__(self, alpha: float, alpha_star: float):
        self.alpha = alpha
        self.alpha_star = alpha_star
        super().__init__(f"alpha={alpha:g} is not above the critical level alpha*={alpha_star:.6g}")


@dataclass(frozen=True)
class RejectionRegion:
    """Union of at most two disjoint closed intervals; endpoints may be infinite."""

    intervals: tuple

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.intervals:
            out |= (x >= lo) & (x <= hi)
        return out

    def mass(self, mean: float, sd: float) -> float:
        return float(sum(_interval_mass(lo, hi, mean, sd) for lo, hi in self.intervals))


@dataclass
class DecisionMatrix:
    """Per-edge decisions with the statistic they thresholded (q-values, or adjusted p-values)."""

    rejected: np.ndarray
    q_values: np.ndarray
    l_values: np.ndarray | None = None

    @property
    def n_rejected(self) -> int:
        return int(self.rejected.sum())


def _interval_mass(lo, hi, mean, sd):
    """Gaussian mass of ``[lo, hi]``, using the upper tail where it is more accurate."""
    z1 = (np.asarray(lo, dtype=float) - mean) / sd
    z2 = (np.asarray(hi, dtype=float) - mean) / sd
    with np.errstate(invalid="ignore"):
        out = np.where(z1 > 0, ndtr(-z1) - ndtr(-z2), ndtr(z2) - ndtr(z1))
    return np.where(z2 > z1, np.maximum(out, 0.0), 0.0)


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > 1)) or np.any(np.isnan(t)):
        raise ValueError("t must lie in [0, 1]")
    return t


def _t_to_s(t):
    """``log((1 - t) / t)`` with the limits ``+inf`` at 0 and ``-inf`` at 1."""
    with np.errstate(divide="ignore"):
        return np.log1p(-t) - np.log(t)


# ---------------------------------------------------------------------------
# rejection regions

def abc_coefficients(q: int, l: int, theta: ModelParams, t: float):
    """Coefficients of the quadratic whose non-positive set is ``{x : l_value(x) <= t}``."""
    if not 0 < t < 1:
        raise ValueError("t must lie in (0, 1)")
    w, mu, s, s0 = theta.w[q, l], theta.mu[q, l], theta.sigma[q, l], theta.sigma0
    a = s ** -2 - s0 ** -2
    b = -2 * mu / s ** 2
    c = mu ** 2 / s ** 2 + 2 * np.log((s / s0) * (1 / w - 1) * (1 / t - 1))
    return float(a), float(b), float(c)


def _region_bounds(theta: ModelParams, s):
    """Interval endpoints for every cell at log-ratio ``s = log((1-t)/t)``.

    ``s`` broadcasts against the ``(Q, Q)`` cell tables. Returns four arrays
    ``lo1, hi1, lo2, hi2``; an empty interval has ``lo >= hi``.
    """
    s = np.asarray(s, dtype=float)
    w, mu, sig, s0 = theta.w, theta.mu, theta.sigma, theta.sigma0
    a = sig ** -2 - s0 ** -2
    b = -2 * mu / sig ** 2
    c0 = mu ** 2 / sig ** 2 + 2 * (np.log(sig / s0) + np.log1p(-w) - np.log(w))
    with np.errstate(invalid="ignore", over="ignore"):
        c = c0 + 2 * s
        shape = np.broadcast(a, c).shape
        a, b, c = (np.broadcast_to(v, shape) for v in (a, b, c))
        lo1 = np.full(shape, np.inf)
        hi1 = np.full(shape, -np.inf)
        lo2 = np.full(shape, np.inf)
        hi2 = np.full(shape, -np.inf)

        full = np.isneginf(c)
        finite = np.isfinite(c)
        lin = finite & (np.abs(a) < A_ZERO_TOL)
        neg = finite & (a <= -A_ZERO_TOL)
        pos = finite & (a >= A_ZERO_TOL)
        disc = b * b - 4 * a * c

        # linear case: b x + c <= 0
        root = np.where(b != 0, -c / np.where(b != 0, b, 1.0), 0.0)
        m = lin & (b > 0)
        lo1[m], hi1[m] = -np.inf, root[m]
        m = lin & (b < 0)
        lo1[m], hi1[m] = root[m], np.inf
        full |= lin & (b == 0) & (c <= 0)

        sq = np.sqrt(np.maximum(disc, 0.0))
        den = np.where(a != 0, 2 * a, 1.0)
        r_a = (-b - sq) / den
        r_b = (-b + sq) / den
        r1, r2 = np.minimum(r_a, r_b), np.maximum(r_a, r_b)

        # concave: outside the roots, everything if no real roots
        full |= neg & (disc < 0)
        m = neg & (disc >= 0)
        lo1[m], hi1[m] = -np.inf, r1[m]
        lo2[m], hi2[m] = r2[m], np.inf

        # convex: between the roots
        m = pos & (disc > 0)
        lo1[m], hi1[m] = r1[m], r2[m]

        lo1[full], hi1[full] = -np.inf, np.inf
        lo2[full], hi2[full] = np.inf, -np.inf
    return lo1, hi1, lo2, hi2


def rejection_region(q: int, l: int, theta: ModelParams, t: float) -> RejectionRegion:
    t = float(_check_t(t))
    lo1, hi1, lo2, hi2 = (v[q, l] for v in _region_bounds(theta, _t_to_s(t)))
    intervals = tuple((float(lo), float(hi)) for lo, hi in ((lo1, hi1), (lo2, hi2)) if lo < hi)
    return RejectionRegion(intervals)


def _q0_q1_cells(theta: ModelParams, s, theta_prime: ModelParams):
    lo1, hi1, lo2, hi2 = _region_bounds(theta, s)
    s0, mu, sig = theta_prime.sigma0, theta_prime.mu, theta_prime.sigma
    q0 = _interval_mass(lo1, hi1, 0.0, s0) + _interval_mass(lo2, hi2, 0.0, s0)
    q1 = _interval_mass(lo1, hi1, mu, sig) + _interval_mass(lo2, hi2, mu, sig)
    return np.clip(q0, 0.0, 1.0), np.clip(q1, 0.0, 1.0)


def q0_q1(t: float, q: int, l: int, theta_prime: ModelParams, theta: ModelParams):
    """Null and alternative probabilities, under ``theta_prime``, of the region built from ``theta``."""
    t = float(_check_t(t))
    q0, q1 = _q0_q1_cells(theta, _t_to_s(t), theta_prime)
    return float(q0[q, l]), float(q1[q, l])


def t1_t2_cells(theta: ModelParams):
    """Per-cell bounds of the range where the region is neither empty nor everything."""
    w, mu, sig, s0 = theta.w, theta.mu, theta.sigma, theta.sigma0
    a = sig ** -2 - s0 ** -2
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        expo = np.where(np.abs(a) < A_ZERO_TOL, 0.0, mu ** 2 / (2 * (s0 ** 2 - sig ** 2)))
        t0 = 1.0 / (1.0 + w / (1 - w) * (s0 / sig) * np.exp(expo))
    t1 = np.where(a >= A_ZERO_TOL, t0, 0.0)
    t2 = np.where(a <= -A_ZERO_TOL, t0, 1.0)
    return t1, t2


def t1_t2(q: int, l: int, theta: ModelParams):
    t1, t2 = t1_t2_cells(theta)
    return float(t1[q, l]), float(t2[q, l])


def t_bounds(theta: ModelParams):
    """``(t1(theta), t2(theta))``: smallest per-cell t1 and largest per-cell t2."""
    t1, t2 = t1_t2_cells(theta)
    return float(t1.min()), float(t2.max())


# ---------------------------------------------------------------------------
# Q function and thresholds

def _big_q_s(theta: ModelParams, s, theta_prime: ModelParams | None = None):
    theta_prime = theta if theta_prime is None else theta_prime
    s = np.asarray(s, dtype=float)
    q0, q1 = _q0_q1_cells(theta, s[..., None, None], theta_prime)
    pp = np.outer(theta_prime.pi, theta_prime.pi)
    w = theta_prime.w
    num = np.sum(pp * (1 - w) * q0, axis=(-2, -1))
    den = num + np.sum(pp * w * q1, axis=(-2, -1))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def big_q(theta: ModelParams, t, theta_prime: ModelParams | None = None):
    """``Q_{theta'}(theta, t)``, vectorized over ``t``; ``theta_prime`` defaults to ``theta``."""
    t = _check_t(t)
    out = _big_q_s(theta, _t_to_s(t), theta_prime)
    return float(out) if out.ndim == 0 else out


def alpha_star(theta: ModelParams) -> tuple[bool, float]:
    """Critical level: zero iff some cell has ``sigma >= sigma0``."""
    a = theta.sigma ** -2 - theta.sigma0 ** -2
    if np.any(a < A_ZERO_TOL):
        return True, 0.0
    t1, _ = t_bounds(theta)
    return False, float(big_q(theta, min(t1 + ALPHA_STAR_OFFSET, 1.0)))


def t_threshold(theta: ModelParams, alpha: float, tol: float = THRESHOLD_TOL) -> float:
    """Largest ``t`` with ``Q(t) <= alpha``, by bisection on ``[t1, t2]``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    pi0, _ = pi0_pi1(theta)
    if alpha >= pi0:
        return 1.0
    is_zero, a_star = alpha_star(theta)
    if not is_zero and alpha <= a_star:
        raise SubcriticalAlphaError(alpha, a_star)
    lo, hi = t_bounds(theta)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if big_q(theta, mid) <= alpha:
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# procedures

def l_values(X: ObservationMatrix, Z, theta: ModelParams) -> np.ndarray:
    """Per-edge l-values at labels ``Z`` (0-based)."""
    return np.exp(-np.logaddexp(0.0, _log_ratio_s(X, Z, theta)))


def _log_ratio_s(X: ObservationMatrix, Z, theta: ModelParams) -> np.ndarray:
    """Per-edge ``log((1 - l) / l)``, the log odds of an edge."""
    Z = np.asarray(Z, dtype=np.intp)
    if Z.shape != (X.n,) or Z.min() < 0 or Z.max() >= theta.Q:
        raise ValueError(f"labels must be {X.n} integers in [0, {theta.Q})")
    rows, cols = edge_pairs(X.n)
    zq, zl = Z[rows], Z[cols]
    w, mu, sig, s0 = theta.w[zq, zl], theta.mu[zq, zl], theta.sigma[zq, zl], theta.sigma0
    x = X.values
    log_g = -0.5 * ((x - mu) / sig) ** 2 - np.log(sig)
    log_g0 = -0.5 * (x / s0) ** 2 - np.log(s0)
    return np.log(w) - np.log1p(-w) + log_g - log_g0


def _q_values_s(X, Z, theta):
    s = _log_ratio_s(X, Z, theta)
    lv = np.exp(-np.logaddexp(0.0, s))
    pi0, _ = pi0_pi1(theta)
    return np.clip(_big_q_s(theta, s), 0.0, pi0), lv


def q_values(X: ObservationMatrix, Z_hat, theta_hat: ModelParams) -> np.ndarray:
    """``Q(theta_hat, l_hat)`` per edge, in ``[0, pi0(theta_hat)]``."""
    return _q_values_s(X, Z_hat, theta_hat)[0]


def procedure_qvalue(X: ObservationMatrix, alpha: float, Z, theta: ModelParams) -> DecisionMatrix:
    """Reject the edges whose q-value is at most ``alpha``."""
    t_threshold(theta, alpha)  # raises below the critical level
    qv, lv = _q_values_s(X, Z, theta)
    return DecisionMatrix(qv <= alpha, qv, lv)


def procedure_vem(X: ObservationMatrix, alpha: float, fit) -> DecisionMatrix:
    return procedure_qvalue(X, alpha, fit.Z_hat, fit.theta)


def procedure_oracle(X: ObservationMatrix, Z_true, theta_true: ModelParams, alpha: float) -> DecisionMatrix:
    return procedure_qvalue(X, alpha, Z_true, theta_true)


# ---------------------------------------------------------------------------
# BH family

def bh_adjusted(p_values) -> np.ndarray:
    """Step-up adjusted p-values ``min_{k >= rank} m p_(k) / k``, capped at 1."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adj, 1.0)
    return out


def bh(p_values, alpha: float) -> DecisionMatrix:
    """Benjamini-Hochberg step-up: reject ``p <= alpha k_hat / m``."""
    p = np.asarray(p_values, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    ps = np.sort(p)
    ok = np.nonzero(ps <= alpha * np.arange(1, m + 1) / m)[0]
    k_hat = ok[-1] + 1 if ok.size else 0
    rejected = p <= alpha * k_hat / m if k_hat else np.zeros(m, dtype=bool)
    return DecisionMatrix(rejected, bh_adjusted(p))


def storey_pi0(p_values, lam: float = 0.5) -> float:
    p = np.asarray(p_values, dtype=float)
    return float(min((1 + np.sum(p > lam)) / (p.size * (1 - lam)), 1.0))


def abh(p_values, alpha: float, pi0_hat: float) -> DecisionMatrix:
    """BH at level ``alpha / pi0_hat``."""
    if not 0 < pi0_hat <= 1:
        raise ValueError("pi0_hat must lie in (0, 1]")
    dec = bh(p_values, alpha / pi0_hat)
    dec.q_values = np.minimum(dec.q_values * pi0_hat, 1.0)
    return dec


def edge_p_values(X: ObservationMatrix, sigma0: float) -> np.ndarray:
    return p_value(X.values, sigma0)
