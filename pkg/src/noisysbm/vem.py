"""Variational EM for the Gaussian NSBM, k-means initialization and ICL selection."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.cluster.vq import ClusterError, kmeans2
from scipy.special import expit

from . import kernels
from .model import (
    ModelParams,
    ObservationMatrix,
    edge_pairs,
    log_alt_density,
    log_null_density,
    log_odds_edge,
)

log = logging.getLogger(__name__)

W_EPS = 1e-10
_TINY_WEIGHT = 1e-12


class FitError(RuntimeError):
    """Raised when every VEM run failed numerically."""


@dataclass
class FitConfig:
    max_vem_iters: int = 500
    max_fixedpoint_iters: int = 100
    rel_tol: float = 1e-6
    damping: float = 0.5
    restarts: int = 10
    sigma2_floor: float = 1e-8
    tau_floor: float = 1e-10
    fixedpoint_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.max_vem_iters < 1 or self.max_fixedpoint_iters < 1 or self.restarts < 1:
            raise ValueError("iteration counts and restarts must be positive")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must lie in [0, 1)")


@dataclass
class FitResult:
    theta: ModelParams
    tau: np.ndarray
    Z_hat: np.ndarray
    j_trace: list
    converged: bool
    icl: float = float("nan")
    restart: int = 0
    restart_j: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def Q(self) -> int:
        return self.theta.Q

    def to_dict(self) -> dict:
        """JSON-ready export; labels are 1-based."""
        return {
            "Q": self.Q,
            "theta": self.theta.to_dict(),
            "Z_hat": (np.asarray(self.Z_hat) + 1).tolist(),
            "tau": np.asarray(self.tau).tolist(),
            "j_trace": [float(v) for v in self.j_trace],
            "converged": bool(self.converged),
            "icl": float(self.icl),
            "restart": int(self.restart),
            "restart_j": [float(v) for v in self.restart_j],
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        theta = ModelParams.from_dict(d["theta"])
        Z = np.asarray(d["Z_hat"], dtype=np.intp) - 1
        tau = d.get("tau")
        if tau is None:
            tau = np.eye(theta.Q)[Z]
        return cls(theta=theta, tau=np.asarray(tau, dtype=float), Z_hat=Z,
                   j_trace=list(d.get("j_trace", [])), converged=bool(d.get("converged", True)),
                   icl=float(d.get("icl", float("nan"))), restart=int(d.get("restart", 0)),
                   restart_j=list(d.get("restart_j", [])), flags=list(d.get("flags", [])))


# ---------------------------------------------------------------------------
# per-edge quantities

def rho(x, q, l, theta: ModelParams):
    """Posterior edge probability given ``x`` and labels ``q, l``; equals ``1 - l_value``."""
    return expit(log_odds_edge(x, q, l, theta))


def d_term(x, q, l, theta: ModelParams):
    r = rho(x, q, l, theta)
    w = theta.w[q, l]
    return (r * (log_alt_density(x, theta.mu[q, l], theta.sigma[q, l]) + np.log(w) - 1.0)
            + (1.0 - r) * (log_null_density(x, theta.sigma0) + np.log1p(-w)))


class EdgeTerms(NamedTuple):
    """Per-edge log-densities and ``rho`` at one parameter value, each ``(m, Q, Q)``."""

    log_g: np.ndarray
    log_g0: np.ndarray
    rho: np.ndarray


def edge_terms(x, theta: ModelParams) -> EdgeTerms:
    x = np.asarray(x, dtype=float)
    log_g = log_alt_density(x[:, None, None], theta.mu, theta.sigma)
    log_g0 = log_null_density(x, theta.sigma0)[:, None, None]
    r = expit(np.log(theta.w) + log_g - np.log1p(-theta.w) - log_g0)
    return EdgeTerms(log_g, log_g0, r)


def edge_rho(x, theta: ModelParams) -> np.ndarray:
    """``rho`` for every edge and cell, shape ``(m, Q, Q)``."""
    return edge_terms(x, theta).rho


def _cell_terms(terms: EdgeTerms, theta: ModelParams, r):
    return r * (terms.log_g + np.log(theta.w)) + (1.0 - r) * (terms.log_g0 + np.log1p(-theta.w))


def edge_d(x, theta: ModelParams, terms: EdgeTerms | None = None) -> np.ndarray:
    """VE-step coefficients ``d`` for every edge and cell, shape ``(m, Q, Q)``."""
    terms = edge_terms(x, theta) if terms is None else terms
    return _cell_terms(terms, theta, terms.rho) - terms.rho


# ---------------------------------------------------------------------------
# VE step

def ve_step(X: ObservationMatrix, theta: ModelParams, tau_init, config: FitConfig | None = None,
            return_info: bool = False, backend=None, terms: EdgeTerms | None = None):
    """Solve the mean-field fixed point for ``tau`` at parameter ``theta``.

    Rows are updated jointly from the previous iterate and damped:
    ``tau <- (1 - damping) * F(tau) + damping * tau``. Iteration stops when
    ``max |F(tau) - tau| < config.fixedpoint_tol`` or after
    ``config.max_fixedpoint_iters`` sweeps.
    """
    config = config or FitConfig()
    d = edge_d(X.values, theta, terms)
    if not np.all(np.isfinite(d)):
        raise FloatingPointError("non-finite d-terms in VE step")
    rows, cols = edge_pairs(X.n)
    tau, n_iter, residual = kernels.ve_fixed_point(
        d, rows, cols, np.log(theta.pi), tau_init, config.max_fixedpoint_iters,
        config.fixedpoint_tol, config.damping, config.tau_floor, backend=backend)
    if not np.all(np.isfinite(tau)):
        raise FloatingPointError("non-finite tau in VE step")
    if return_info:
        return tau, n_iter, residual
    return tau


def fixed_point_residual(X: ObservationMatrix, theta: ModelParams, tau, floor: float = 0.0) -> float:
    """``max |F(tau) - tau|`` for the undamped fixed-point map ``F``."""
    _, _, res = ve_step(X, theta, tau, FitConfig(max_fixedpoint_iters=1, damping=0.0,
                                                  tau_floor=floor, fixedpoint_tol=0.0),
                        return_info=True)
    return res


# ---------------------------------------------------------------------------
# M step

def _m_step(X, tau, theta_prev, sigma2_floor=1e-8, r=None):
    tau = np.asarray(tau, dtype=float)
    if r is None:
        r = edge_rho(X.values, theta_prev)
    rows, cols = edge_pairs(X.n)
    N, K, Kx, Kx2, bar, barx2 = kernels.pair_moments(X.values, r, rows, cols, tau)
    Ns, Ks, Kxs, Kx2s = N + N.T, K + K.T, Kx + Kx.T, Kx2 + Kx2.T

    pi = tau.mean(axis=0)
    pi = pi / pi.sum()
    w = np.clip(Ks / Ns, W_EPS, 1.0 - W_EPS)

    flagged = Ks <= _TINY_WEIGHT
    safe = np.where(flagged, 1.0, Ks)
    mu = Kxs / safe
    s2 = np.maximum(Kx2s / safe - mu * mu, sigma2_floor)
    mu = np.where(flagged, theta_prev.mu, mu)
    sigma = np.where(flagged, theta_prev.sigma, np.sqrt(s2))

    if bar > _TINY_WEIGHT:
        sigma0 = float(np.sqrt(max(barx2 / bar, sigma2_floor)))
    else:
        sigma0 = theta_prev.sigma0
    cells = [(int(q) + 1, int(l) + 1) for q, l in np.argwhere(np.triu(flagged))]
    return ModelParams(pi, w, sigma0, mu, sigma), cells


def m_step(X: ObservationMatrix, tau, theta_prev: ModelParams, sigma2_floor: float = 1e-8,
           rho_table=None) -> ModelParams:
    """Maximize the expected complete log-likelihood at fixed ``tau``.

    ``rho_table`` (shape ``(m, Q, Q)``) overrides the posterior edge
    probabilities otherwise computed at ``theta_prev``. Cells whose weights all
    vanish keep their ``theta_prev`` values and are logged.
    """
    theta, cells = _m_step(X, tau, theta_prev, sigma2_floor, rho_table)
    if cells:
        log.warning("M-step: no weight for cells %s; kept previous values", cells)
    return theta


# ---------------------------------------------------------------------------
# criteria

def _entropy_term(tau, pi):
    tau = np.asarray(tau, dtype=float)
    logs = np.where(tau > 0, np.log(np.where(tau > 0, pi / np.where(tau > 0, tau, 1.0), 1.0)), 0.0)
    return float(np.sum(tau * logs))


def j_criterion(theta: ModelParams, tau, theta_prev: ModelParams, X: ObservationMatrix,
                terms: EdgeTerms | None = None, r=None) -> float:
    """Variational criterion ``J(theta; tau, theta_prev)`` with ``rho`` taken at ``theta_prev``.

    ``terms`` (at ``theta``) and ``r`` (``rho`` at ``theta_prev``) may be passed
    to reuse earlier evaluations.
    """
    r = edge_rho(X.values, theta_prev) if r is None else r
    terms = edge_terms(X.values, theta) if terms is None else terms
    c = _cell_terms(terms, theta, r) - r
    rows, cols = edge_pairs(X.n)
    return _entropy_term(tau, theta.pi) + kernels.pair_contract(c, rows, cols, tau)


def expected_complete_loglik(X: ObservationMatrix, theta: ModelParams, tau) -> float:
    tau = np.asarray(tau, dtype=float)
    terms = edge_terms(X.values, theta)
    rows, cols = edge_pairs(X.n)
    z_part = float(np.sum(tau * np.log(theta.pi)))
    return z_part + kernels.pair_contract(_cell_terms(terms, theta, terms.rho), rows, cols, tau)


def bic_penalty(Q: int, n: int, m: int, d0: int = 1, d1: int = 2) -> float:
    return -(Q - 1) * np.log(n) - ((1 + d1) * Q * (Q + 1) / 2 + d0) * np.log(m)


def icl(X: ObservationMatrix, fit: FitResult, Q: int | None = None) -> float:
    Q = fit.Q if Q is None else Q
    if Q != fit.Q:
        raise ValueError(f"fit has {fit.Q} groups, not {Q}")
    return expected_complete_loglik(X, fit.theta, fit.tau) + bic_penalty(Q, X.n, X.m)


# ---------------------------------------------------------------------------
# initialization

def hard_tau(labels, Q: int, floor: float = 1e-10) -> np.ndarray:
    labels = np.asarray(labels)
    if Q == 1:
        return np.ones((labels.shape[0], 1))
    tau = np.full((labels.shape[0], Q), floor)
    tau[np.arange(labels.shape[0]), labels] = 1.0 - (Q - 1) * floor
    return tau


def init_kmeans(X: ObservationMatrix, Q: int, seed=None, floor: float = 1e-10,
                n_init: int = 5, max_iter: int = 50, attempts: int = 10) -> np.ndarray:
    """Hard k-means++ clustering of the rows of the symmetric observation matrix."""
    if not 1 <= Q <= X.n:
        raise ValueError(f"need 1 <= Q <= n, got Q={Q}, n={X.n}")
    if Q == 1:
        return np.ones((X.n, 1))
    rng = np.random.default_rng(seed)
    data = X.dense()
    for _ in range(attempts):
        best, best_inertia = None, np.inf
        try:
            for _ in range(n_init):
                centers, labels = kmeans2(data, Q, iter=max_iter, minit="++",
                                          missing="raise", seed=rng)
                inertia = float(np.sum((data - centers[labels]) ** 2))
                if inertia < best_inertia:
                    best, best_inertia = labels, inertia
        except ClusterError:
            continue
        if np.unique(best).size == Q:
            return hard_tau(best, Q, floor)
    raise FitError(f"k-means produced an empty cluster in {attempts} attempts")


def pooled_mixture(x, n_iter: int = 200, tol: float = 1e-8):
    """Two-component fit ``(1 - w) N(0, s0^2) + w N(mu, s^2)`` of all pooled values.

    Returns ``(w, mu, s, s0, rho)`` with ``rho`` the per-value posterior of the
    second component.
    """
    x = np.asarray(x, dtype=float)
    s0 = max(np.median(np.abs(x)) / 0.6745, 1e-3)
    big = np.abs(x) > 2 * s0
    if big.sum() >= 2:
        w, mu, s = big.mean(), x[big].mean(), max(x[big].std(), 0.5 * s0)
    else:
        w, mu, s = 0.05, 2 * s0, s0
    r = np.zeros_like(x)
    for _ in range(n_iter):
        a = (np.log(w) + log_alt_density(x, mu, s)) - (np.log1p(-w) + log_null_density(x, s0))
        r = expit(a)
        sr = r.sum()
        sn = x.size - sr
        if sr <= _TINY_WEIGHT or sn <= _TINY_WEIGHT:
            break
        new_w = float(np.clip(sr / x.size, 1e-6, 1 - 1e-6))
        new_mu = float(r @ x / sr)
        new_s = float(np.sqrt(max(r @ (x - new_mu) ** 2 / sr, 1e-8)))
        new_s0 = float(np.sqrt(max((1 - r) @ x ** 2 / sn, 1e-8)))
        delta = max(abs(new_w - w), abs(new_mu - mu), abs(new_s - s), abs(new_s0 - s0))
        w, mu, s, s0 = new_w, new_mu, new_s, new_s0
        if delta < tol:
            break
    return w, mu, s, s0, r


def initial_theta(X: ObservationMatrix, tau, sigma2_floor: float = 1e-8) -> ModelParams:
    """First parameter from an M-step on ``tau`` with pooled-mixture edge posteriors."""
    Q = tau.shape[1]
    w, mu, s, s0, r = pooled_mixture(X.values)
    fallback = ModelParams(np.full(Q, 1.0 / Q), np.full((Q, Q), w), s0,
                           np.full((Q, Q), mu), np.full((Q, Q), s))
    rtab = np.broadcast_to(r[:, None, None], (X.m, Q, Q))
    theta, _ = _m_step(X, tau, fallback, sigma2_floor, rtab)
    return theta


# ---------------------------------------------------------------------------
# fitting

def _argmax_labels(tau):
    return np.argmax(tau, axis=1).astype(np.intp)


def _single_run(X, Q, config, rng):
    tau = init_kmeans(X, Q, rng, floor=config.tau_floor)
    theta = initial_theta(X, tau, config.sigma2_floor)
    terms = edge_terms(X.values, theta)
    j_trace, flags = [], []
    converged = False
    for it in range(config.max_vem_iters):
        tau = ve_step(X, theta, tau, config, terms=terms)
        theta_new, cells = _m_step(X, tau, theta, config.sigma2_floor, terms.rho)
        if cells:
            flags.append(f"iteration {it}: no weight for cells {cells}")
        new_terms = edge_terms(X.values, theta_new)
        J = j_criterion(theta_new, tau, theta, X, terms=new_terms, r=terms.rho)
        if not np.isfinite(J):
            raise FloatingPointError("non-finite J")
        if j_trace and J < j_trace[-1] - config.rel_tol * abs(j_trace[-1]):
            log.debug("J decreased at iteration %d: %.6g -> %.6g", it, j_trace[-1], J)
        theta, terms = theta_new, new_terms
        j_trace.append(J)
        if len(j_trace) > 1 and abs(J - j_trace[-2]) <= config.rel_tol * abs(J):
            converged = True
            break
    tau, _, residual = ve_step(X, theta, tau, config, return_info=True, terms=terms)
    if residual >= config.fixedpoint_tol:
        converged = False
    return FitResult(theta=theta, tau=tau, Z_hat=_argmax_labels(tau), j_trace=j_trace,
                     converged=converged, flags=flags)


def fit(X: ObservationMatrix, Q: int, config: FitConfig | None = None) -> FitResult:
    """Best of ``config.restarts`` VEM runs (highest final J; ties to the earliest run)."""
    config = config or FitConfig()
    if not 1 <= Q <= X.n:
        raise ValueError(f"need 1 <= Q <= n, got Q={Q}, n={X.n}")
    best, finals, errors = None, [], []
    for r in range(config.restarts):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, Q, r]))
        try:
            with np.errstate(over="ignore", under="ignore"):
                run = _single_run(X, Q, config, rng)
        except (FloatingPointError, FitError, ValueError) as exc:
            errors.append(f"restart {r}: {exc}")
            finals.append(float("nan"))
            continue
        run.restart = r
        finals.append(run.j_trace[-1])
        if best is None or run.j_trace[-1] > best.j_trace[-1]:
            best = run
    if best is None:
        raise FitError(f"all {config.restarts} restarts failed: {'; '.join(errors)}")
    best.restart_j = finals
    best.flags.extend(errors)
    best.icl = icl(X, best)
    return best


def select_q(X: ObservationMatrix, q_max: int, config: FitConfig | None = None):
    """Fit ``Q = 1..q_max`` and return ``(Q_hat, {Q: FitResult})`` maximizing ICL."""
    if q_max < 1:
        raise ValueError("q_max must be at least 1")
    fits, errors = {}, []
    for Q in range(1, min(q_max, X.n) + 1):
        try:
            fits[Q] = fit(X, Q, config)
        except FitError as exc:
            log.warning("Q=%d skipped: %s", Q, exc)
            errors.append(str(exc))
    if not fits:
        raise FitError("every Q failed: " + "; ".join(errors))
    q_hat = max(fits, key=lambda Q: (fits[Q].icl, -Q))
    return q_hat, fits


def config_dict(config: FitConfig) -> dict:
    return asdict(config)
